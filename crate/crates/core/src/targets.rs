//! Gaussian-mixture targets `π = Σ α_i N(m_i, Σ_i)`.
//!
//! Each component caches its Cholesky factor (for exact sampling) and its
//! eigendecomposition. The eigenbasis lets the convolution path evaluate the
//! family `N(s·m_i, c·Σ_i + δ·I)` for any `(s, c, δ)` without refactoring,
//! since the eigenvalues simply move to `c·λ + δ`.
//!
//! Density and score are evaluated in log space: responsibilities come from a
//! log-sum-exp over the component log densities, so narrow components far
//! from `x` never underflow to a 0/0.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{check_dim, Error, Result};
use crate::samples::Samples;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Lipschitz, dissipativity and weak-convexity constants of a potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetConstants {
    pub lipschitz: f64,
    pub dissipativity_a: f64,
    pub dissipativity_b: f64,
    pub dissipativity_radius: f64,
    pub weak_convexity: f64,
}

impl TargetConstants {
    /// Largest step size the discrete analysis admits, `a / L²`.
    pub fn step_cap(&self) -> f64 {
        self.dissipativity_a / (self.lipschitz * self.lipschitz)
    }
}

/// Affine family of a mixture: means scaled by `mean_scale`, covariances
/// mapped to `cov_scale·Σ_i + cov_shift·I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Transform {
    pub mean_scale: f64,
    pub cov_scale: f64,
    pub cov_shift: f64,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        mean_scale: 1.0,
        cov_scale: 1.0,
        cov_shift: 0.0,
    };

    /// The variance-preserving convolution `√(1−τ)X + √τ Z`.
    pub fn convolution(tau: f64) -> Transform {
        Transform {
            mean_scale: (1.0 - tau).sqrt(),
            cov_scale: 1.0 - tau,
            cov_shift: tau,
        }
    }

    #[inline]
    fn eigenvalue(&self, lambda: f64) -> f64 {
        self.cov_scale * lambda + self.cov_shift
    }
}

#[derive(Debug, Clone)]
struct Component {
    weight: f64,
    log_weight: f64,
    /// `log w_i − ½(d·ln 2π + ln det Σ_i)`.
    log_norm: f64,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    cholesky: DMatrix<f64>,
    /// Eigenvalues in the order of `basis` columns (axis order when diagonal).
    eigenvalues: DVector<f64>,
    /// `None` for diagonal covariances, whose eigenbasis is the identity.
    basis: Option<DMatrix<f64>>,
}

impl Component {
    /// Eigen-coordinates of `x − s·m_i` written to `z`.
    #[inline]
    fn centered(&self, x: &[f64], mean_scale: f64, diff: &mut [f64], z: &mut [f64]) {
        for ((dj, xj), mj) in diff.iter_mut().zip(x).zip(self.mean.iter()) {
            *dj = xj - mean_scale * mj;
        }
        self.to_basis(diff, z);
    }

    /// Coordinates of `v` in the eigenbasis.
    #[inline]
    fn to_basis(&self, v: &[f64], out: &mut [f64]) {
        match &self.basis {
            None => out.copy_from_slice(v),
            Some(q) => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = q.column(j).iter().zip(v).map(|(a, b)| a * b).sum();
                }
            }
        }
    }

    /// Maps eigen-coordinates back to the standard basis, accumulating `scale·Q·z`.
    #[inline]
    fn accumulate_from_basis(&self, z: &[f64], scale: f64, out: &mut [f64]) {
        match &self.basis {
            None => {
                for (o, zj) in out.iter_mut().zip(z) {
                    *o += scale * zj;
                }
            }
            Some(q) => {
                for (j, zj) in z.iter().enumerate() {
                    let s = scale * zj;
                    for (o, qij) in out.iter_mut().zip(q.column(j).iter()) {
                        *o += s * qij;
                    }
                }
            }
        }
    }
}

/// A finite Gaussian mixture in `R^d`. Immutable after construction.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

impl GaussianMixture {
    /// Builds a mixture from full covariance matrices.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidMixture("no components".into()));
        }
        if means.len() != weights.len() || covariances.len() != weights.len() {
            return Err(Error::InvalidMixture(format!(
                "{} weights, {} means, {} covariances",
                weights.len(),
                means.len(),
                covariances.len()
            )));
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::InvalidMixture(format!("weight {i} = {w} is not positive")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMixture(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidMixture("dimension must be positive".into()));
        }

        let mut components = Vec::with_capacity(weights.len());
        for (i, ((weight, mean), cov)) in weights.into_iter().zip(means).zip(covariances).enumerate() {
            if mean.len() != dim || cov.nrows() != dim || cov.ncols() != dim {
                return Err(Error::InvalidMixture(format!(
                    "component {i} does not have dimension {dim}"
                )));
            }
            if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidMixture(format!("component {i} has non-finite entries")));
            }
            let scale = cov.amax().max(1.0);
            if (&cov - cov.transpose()).amax() > 1e-12 * scale {
                return Err(Error::InvalidMixture(format!("covariance {i} is not symmetric")));
            }
            let diagonal = (0..dim).all(|r| (0..dim).all(|c| r == c || cov[(r, c)] == 0.0));
            let (eigenvalues, basis) = if diagonal {
                (cov.diagonal(), None)
            } else {
                let eig = SymmetricEigen::new(cov.clone());
                (eig.eigenvalues, Some(eig.eigenvectors))
            };
            if eigenvalues.iter().any(|&l| !(l > 0.0)) {
                return Err(Error::InvalidMixture(format!(
                    "covariance {i} is not positive definite (min eigenvalue {})",
                    eigenvalues.min()
                )));
            }
            let cholesky = cov
                .clone()
                .cholesky()
                .ok_or_else(|| {
                    Error::InvalidMixture(format!("covariance {i} has no Cholesky factor"))
                })?
                .l();
            let log_det: f64 = eigenvalues.iter().map(|l| l.ln()).sum();
            components.push(Component {
                weight,
                log_weight: weight.ln(),
                log_norm: weight.ln() - 0.5 * (dim as f64 * LN_2PI + log_det),
                mean,
                covariance: cov,
                cholesky,
                eigenvalues,
                basis,
            });
        }
        Ok(Self { dim, components })
    }

    /// Mixture with diagonal covariances given as per-axis variances.
    pub fn diagonal(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let means = means.into_iter().map(DVector::from_vec).collect();
        let covs = variances
            .into_iter()
            .map(|v| DMatrix::from_diagonal(&DVector::from_vec(v)))
            .collect();
        Self::new(weights, means, covs)
    }

    /// Single Gaussian `N(mean, cov)`.
    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![cov])
    }

    /// `N(0, s²·I_d)`.
    pub fn isotropic(dim: usize, std: f64) -> Result<Self> {
        if !(std > 0.0 && std.is_finite()) {
            return Err(Error::InvalidMixture(format!("standard deviation {std} must be positive")));
        }
        Self::gaussian(
            DVector::zeros(dim),
            DMatrix::from_diagonal_element(dim, dim, std * std),
        )
    }

    pub fn standard_normal(dim: usize) -> Result<Self> {
        Self::isotropic(dim, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn mean(&self, component: usize) -> &DVector<f64> {
        &self.components[component].mean
    }

    pub fn covariance(&self, component: usize) -> &DMatrix<f64> {
        &self.components[component].covariance
    }

    pub fn eigenvalues(&self, component: usize) -> &DVector<f64> {
        &self.components[component].eigenvalues
    }

    /// Smallest and largest covariance eigenvalue over all components.
    pub fn eigen_range(&self) -> (f64, f64) {
        self.components.iter().flat_map(|c| c.eigenvalues.iter()).fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), &l| (lo.min(l), hi.max(l)),
        )
    }

    /// Same as [`eigen_range`](Self::eigen_range) for the transformed
    /// covariances `c·Σ_i + δ·I` (eigenvalues move affinely).
    pub(crate) fn eigen_range_transformed(&self, t: &Transform) -> (f64, f64) {
        let (lo, hi) = self.eigen_range();
        let (a, b) = (t.eigenvalue(lo), t.eigenvalue(hi));
        (a.min(b), a.max(b))
    }

    /// Mixture mean `Σ α_i m_i`.
    pub fn mixture_mean(&self) -> DVector<f64> {
        self.components
            .iter()
            .fold(DVector::zeros(self.dim), |acc, c| acc + &c.mean * c.weight)
    }

    /// Mixture covariance `Σ α_i (Σ_i + m_i m_iᵀ) − μ μᵀ`.
    pub fn mixture_covariance(&self) -> DMatrix<f64> {
        let mu = self.mixture_mean();
        let second = self.components.iter().fold(DMatrix::zeros(self.dim, self.dim), |acc, c| {
            acc + (&c.covariance + &c.mean * c.mean.transpose()) * c.weight
        });
        second - &mu * mu.transpose()
    }

    /// The mixture `Σ α_i N(s·m_i, c·Σ_i + δ·I)` as a standalone object.
    pub(crate) fn transformed(&self, t: &Transform) -> Result<Self> {
        let eye = DMatrix::<f64>::identity(self.dim, self.dim);
        Self::new(
            self.weights(),
            self.components.iter().map(|c| &c.mean * t.mean_scale).collect(),
            self.components
                .iter()
                .map(|c| &c.covariance * t.cov_scale + &eye * t.cov_shift)
                .collect(),
        )
    }

    /// `log p(x)`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.eval(x, &Transform::IDENTITY, None))
    }

    /// `∇ log p(x)`.
    pub fn score(&self, x: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim);
        self.score_into(x, out.as_mut_slice())?;
        Ok(out)
    }

    /// Writes `∇ log p(x)` into `out` and returns `log p(x)`.
    pub fn score_into(&self, x: &[f64], out: &mut [f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, out.len())?;
        Ok(self.eval(x, &Transform::IDENTITY, Some(out)))
    }

    /// Log density of the transformed mixture, optionally writing its score.
    ///
    /// Callers have validated dimensions.
    pub(crate) fn eval(&self, x: &[f64], t: &Transform, grad: Option<&mut [f64]>) -> f64 {
        let d = self.dim;
        let identity = *t == Transform::IDENTITY;
        let mut log_terms: SmallVec<[f64; 8]> = SmallVec::with_capacity(self.components.len());
        let mut diff: SmallVec<[f64; 16]> = SmallVec::from_elem(0.0, d);
        let mut z: SmallVec<[f64; 16]> = SmallVec::from_elem(0.0, d);

        for c in &self.components {
            c.centered(x, t.mean_scale, &mut diff, &mut z);
            let mut quad = 0.0;
            if identity {
                for (zj, l) in z.iter().zip(c.eigenvalues.iter()) {
                    quad += zj * zj / l;
                }
                log_terms.push(c.log_norm - 0.5 * quad);
            } else {
                let mut log_det = 0.0;
                for (zj, lambda) in z.iter().zip(c.eigenvalues.iter()) {
                    let l = t.eigenvalue(*lambda);
                    quad += zj * zj / l;
                    log_det += l.ln();
                }
                log_terms.push(c.log_weight - 0.5 * (d as f64 * LN_2PI + log_det + quad));
            }
        }

        let max = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            // quadratic forms overflowed: no meaningful weights
            if let Some(out) = grad {
                out.fill(f64::NAN);
            }
            return f64::NEG_INFINITY;
        }
        let mut total = 0.0;
        for l in log_terms.iter_mut() {
            *l = (*l - max).exp();
            total += *l;
        }
        if let Some(out) = grad {
            out.fill(0.0);
            for (c, term) in self.components.iter().zip(&log_terms) {
                let w = term / total;
                if w > 0.0 {
                    c.centered(x, t.mean_scale, &mut diff, &mut z);
                    for (zj, lambda) in z.iter_mut().zip(c.eigenvalues.iter()) {
                        *zj /= t.eigenvalue(*lambda);
                    }
                    c.accumulate_from_basis(&z, -w, out);
                }
            }
        }
        max + total.ln()
    }

    /// Minimizer of `½(y−m_i)ᵀΣ_i⁻¹(y−m_i) + |x−y|²/(2τ)`: in the eigenbasis of
    /// `Σ_i` each coordinate of `x − m_i` shrinks by `λ/(λ+τ)`.
    pub(crate) fn component_prox(&self, component: usize, x: &[f64], tau: f64, out: &mut [f64]) {
        let c = &self.components[component];
        let d = self.dim;
        let mut diff: SmallVec<[f64; 16]> = x.iter().zip(c.mean.iter()).map(|(a, b)| a - b).collect();
        let mut z: SmallVec<[f64; 16]> = SmallVec::from_elem(0.0, d);
        c.to_basis(&diff, &mut z);
        for (zj, l) in z.iter_mut().zip(c.eigenvalues.iter()) {
            *zj *= l / (l + tau);
        }
        diff.fill(0.0);
        c.accumulate_from_basis(&z, 1.0, &mut diff);
        for ((o, m), v) in out.iter_mut().zip(c.mean.iter()).zip(&diff) {
            *o = m + v;
        }
    }

    /// `count` i.i.d. exact draws: component by weight, then `m + C·z` with the
    /// Cholesky factor `C` of its covariance.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Samples> {
        if count == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        let d = self.dim;
        let mut data = vec![0.0; count * d];
        let mut z = vec![0.0; d];
        for row in data.chunks_exact_mut(d) {
            let c = self.pick_component(rng.random::<f64>());
            for zj in z.iter_mut() {
                *zj = rng.sample(StandardNormal);
            }
            for (r, out) in row.iter_mut().enumerate() {
                let mut v = c.mean[r];
                for (k, zk) in z.iter().enumerate().take(r + 1) {
                    v += c.cholesky[(r, k)] * zk;
                }
                *out = v;
            }
        }
        Samples::new(data, d)
    }

    fn pick_component(&self, u: f64) -> &Component {
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                return c;
            }
        }
        self.components.last().expect("mixture has at least one component")
    }

    /// Step-size constants from the covariance spectrum.
    ///
    /// `L = 1/λ_min` and `a = 1/λ_max` over all components; both are exact for
    /// a single Gaussian. `b` and `R` are far-field placeholders that the
    /// sampler never reads, and `α = L`.
    pub fn estimate_constants(&self) -> TargetConstants {
        let (lo, hi) = self.eigen_range();
        let lipschitz = 1.0 / lo;
        let a = 1.0 / hi;
        let radius = self
            .components
            .iter()
            .map(|c| c.mean.norm())
            .fold(0.0, f64::max)
            + 3.0 * hi.sqrt();
        TargetConstants {
            lipschitz,
            dissipativity_a: a,
            dissipativity_b: a * radius * radius,
            dissipativity_radius: radius,
            weak_convexity: lipschitz,
        }
    }

    /// One-dimensional marginal along `axis`.
    pub fn marginal(&self, axis: usize) -> Result<Self> {
        if axis >= self.dim {
            return Err(Error::InvalidArgument(format!(
                "axis {axis} out of range for dimension {}",
                self.dim
            )));
        }
        Self::diagonal(
            self.weights(),
            self.components.iter().map(|c| vec![c.mean[axis]]).collect(),
            self.components
                .iter()
                .map(|c| vec![c.covariance[(axis, axis)]])
                .collect(),
        )
    }

    /// The one-dimensional mixture used throughout the experiments:
    /// weights (0.3, 0.4, 0.3), means (−2, 0, 2), standard deviations (0.2, 0.1, 0.3).
    pub fn reference_1d() -> Self {
        Self::diagonal(
            vec![0.3, 0.4, 0.3],
            vec![vec![-2.0], vec![0.0], vec![2.0]],
            vec![vec![0.04], vec![0.01], vec![0.09]],
        )
        .expect("valid reference mixture")
    }

    /// The four-mode two-dimensional mixture of the 2D study.
    pub fn reference_2d() -> Self {
        let std = [[0.2, 0.2], [0.1, 0.2], [0.3, 0.1], [0.1, 0.1]];
        Self::diagonal(
            vec![0.2, 0.4, 0.2, 0.2],
            vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0], vec![2.0, 2.0]],
            std.iter().map(|s| s.iter().map(|v| v * v).collect()).collect(),
        )
        .expect("valid reference mixture")
    }
}
