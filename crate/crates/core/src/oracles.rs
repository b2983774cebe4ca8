//! Brute-force references: grid-search prox, finite differences, Monte Carlo
//! convolution densities and the closed-form Gaussian KL.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::metrics::{histogram_kl, HistogramSpec, KlEstimate};
use crate::sampler::StepRecord;
use crate::samples::Samples;
use crate::targets::{GaussianMixture, Transform};

const MAX_GRID_POINTS: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub resolution: f64,
}

impl GridAxis {
    fn len(&self) -> usize {
        ((self.hi - self.lo) / self.resolution).round() as usize + 1
    }

    fn point(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.resolution
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    axes: Vec<GridAxis>,
}

impl GridSpec {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidArgument("grid needs at least one axis".into()));
        }
        let mut points = 1usize;
        for (i, a) in axes.iter().enumerate() {
            if !(a.resolution > 0.0 && a.lo < a.hi && a.lo.is_finite() && a.hi.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "grid axis {i}: need lo < hi and resolution > 0, got [{}, {}] @ {}",
                    a.lo, a.hi, a.resolution
                )));
            }
            points = points.saturating_mul(a.len());
        }
        if points > MAX_GRID_POINTS {
            return Err(Error::InvalidArgument(format!("{points} grid points exceed the limit of {MAX_GRID_POINTS}")));
        }
        Ok(Self { axes })
    }

    /// Grid of half-width `radius` around `center`.
    pub fn centered(center: &[f64], radius: f64, resolution: f64) -> Result<Self> {
        Self::new(
            center
                .iter()
                .map(|&c| GridAxis { lo: c - radius, hi: c + radius, resolution })
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[GridAxis] {
        &self.axes
    }
}

/// Exhaustive minimizer of `U(y) + |x − y|²/(2τ)` over the grid (d ≤ 2).
///
/// Ties keep the lexicographically first grid point. A minimizer on the grid
/// boundary means the grid is too small and is reported as an error.
pub fn grid_prox(potential: impl Fn(&[f64]) -> f64, x: &[f64], tau: f64, grid: &GridSpec) -> Result<DVector<f64>> {
    check_dim(grid.dim(), x.len())?;
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("prox parameter must be positive, got {tau}")));
    }
    let objective = |y: &[f64]| potential(y) + y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * tau);
    let (best, index) = match grid.axes.as_slice() {
        [a] => {
            let mut best = (f64::INFINITY, vec![0]);
            for i in 0..a.len() {
                let v = objective(&[a.point(i)]);
                if v < best.0 {
                    best = (v, vec![i]);
                }
            }
            best
        }
        [a, b] => {
            let mut best = (f64::INFINITY, vec![0, 0]);
            for i in 0..a.len() {
                let yi = a.point(i);
                for j in 0..b.len() {
                    let v = objective(&[yi, b.point(j)]);
                    if v < best.0 {
                        best = (v, vec![i, j]);
                    }
                }
            }
            best
        }
        _ => return Err(Error::InvalidArgument(format!("grid prox supports d <= 2, got {}", grid.dim()))),
    };
    if !best.is_finite() {
        return Err(Error::InvalidArgument("objective is not finite anywhere on the grid".into()));
    }
    if index.iter().zip(&grid.axes).any(|(&i, a)| i == 0 || i + 1 == a.len()) {
        return Err(Error::InvalidArgument("grid prox minimizer lies on the grid boundary; enlarge the grid".into()));
    }
    Ok(DVector::from_iterator(index.len(), index.iter().zip(&grid.axes).map(|(&i, a)| a.point(i))))
}

/// Central differences `(f(x + s e_j) − f(x − s e_j)) / 2s` per axis.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Result<DVector<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {step}")));
    }
    let mut y = x.to_vec();
    let mut g = DVector::zeros(x.len());
    for j in 0..x.len() {
        y[j] = x[j] + step;
        let plus = f(&y);
        y[j] = x[j] - step;
        let minus = f(&y);
        y[j] = x[j];
        g[j] = (plus - minus) / (2.0 * step);
    }
    Ok(g)
}

/// Histogram KL of `n_mc` draws of `√(1−τ)X + √τ Z` against the analytic
/// convolved mixture.
pub fn mc_convolution_check(
    target: &GaussianMixture,
    tau: f64,
    n_mc: usize,
    spec: &HistogramSpec,
    seed: u64,
) -> Result<KlEstimate> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau must lie in [0, 1], got {tau}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = target.sample(n_mc, &mut rng)?.into_vec();
    let (a, b) = ((1.0 - tau).sqrt(), tau.sqrt());
    for v in data.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = a * *v + b * z;
    }
    let samples = Samples::new(data, target.dim())?;
    histogram_kl(&samples, &target.transformed(&Transform::convolution(tau))?, spec)
}

/// `KL(N(m₁, Σ₁) | N(m₂, Σ₂))` in closed form.
pub fn gaussian_kl(mean1: &DVector<f64>, cov1: &DMatrix<f64>, mean2: &DVector<f64>, cov2: &DMatrix<f64>) -> Result<f64> {
    let d = mean1.len();
    check_dim(d, mean2.len())?;
    for c in [cov1, cov2] {
        if c.shape() != (d, d) {
            return Err(Error::DimensionMismatch { expected: d, got: c.nrows() });
        }
    }
    let not_spd = || Error::InvalidArgument("covariance is not symmetric positive definite".into());
    let l1 = cov1.clone().cholesky().ok_or_else(not_spd)?;
    let l2 = cov2.clone().cholesky().ok_or_else(not_spd)?;
    let log_det = |l: &nalgebra::Cholesky<f64, nalgebra::Dyn>| 2.0 * l.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let trace = l2.solve(cov1).trace();
    let diff = mean2 - mean1;
    let quad = diff.dot(&l2.solve(&diff));
    Ok(0.5 * (trace + quad - d as f64 + log_det(&l2) - log_det(&l1)))
}

/// Direct O(k²) evaluation of the discrete KL error bound, term by term as
/// written; see [`crate::metrics::theory_bound`].
pub fn naive_theory_bound(c_lsi: impl Fn(f64) -> f64, history: &[StepRecord], kl0: f64, c: f64) -> f64 {
    let k = history.len() - 1;
    let d = |m: usize| 2.0 * history[m].h / c_lsi(history[m].tau);
    let first = kl0 * (-(1..=k).map(d).sum::<f64>()).exp();
    let mut jumps = 0.0;
    let mut discretization = 0.0;
    for i in 0..k {
        let mut inner = 0.0;
        for j in 0..=i {
            inner += d(k - j);
        }
        jumps += (-inner).exp() * (history[k - i].tau - history[k - 1 - i].tau).abs();
        let mut inner = 0.0;
        for j in 0..i {
            inner += d(k - j);
        }
        discretization += history[k - i].h.powi(2) * (-inner).exp();
    }
    first + c * jumps + c * discretization + c * history[k].tau
}
