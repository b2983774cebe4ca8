//! KL estimates of an ensemble against an analytic target, and the discrete
//! error bound evaluator.
//!
//! The KL estimator is a binned plug-in: `Σ_b p̂_b log(p̂_b / q_b)` over
//! occupied bins, with `p̂_b` the empirical bin fraction and `q_b` the target
//! mass of the bin by midpoint quadrature (4 sub-points per axis).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::samples::Samples;
use crate::sampler::StepRecord;
use crate::targets::{GaussianMixture, Transform};

const SUBDIVISIONS: usize = 4;
const MASS_FLOOR: f64 = 1e-300;
const MAX_CELLS: usize = 1_000_000;
/// Out-of-range fraction above which a report carries a warning.
pub const OUT_OF_RANGE_WARNING: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisBins {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl AxisBins {
    fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    /// Bin of `x`, clamped to the edge bins; `true` if `x` was outside `[lo, hi]`.
    fn locate(&self, x: f64) -> (usize, bool) {
        if x < self.lo {
            return (0, true);
        }
        if x > self.hi || x.is_nan() {
            return (self.bins - 1, true);
        }
        let b = ((x - self.lo) / self.width()) as usize;
        (b.min(self.bins - 1), false)
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        let w = self.width();
        (0..self.bins).map(move |b| self.lo + (b as f64 + 0.5) * w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    axes: Vec<AxisBins>,
}

impl HistogramSpec {
    pub fn new(axes: Vec<AxisBins>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidArgument("histogram needs at least one axis".into()));
        }
        let mut cells = 1usize;
        for (i, a) in axes.iter().enumerate() {
            if !(a.lo < a.hi && a.lo.is_finite() && a.hi.is_finite()) {
                return Err(Error::InvalidArgument(format!("axis {i}: need lo < hi, got [{}, {}]", a.lo, a.hi)));
            }
            if a.bins < 2 {
                return Err(Error::InvalidArgument(format!("axis {i}: need at least 2 bins, got {}", a.bins)));
            }
            cells = cells.saturating_mul(a.bins);
        }
        if cells > MAX_CELLS {
            return Err(Error::InvalidArgument(format!("{cells} histogram cells exceed the limit of {MAX_CELLS}")));
        }
        Ok(Self { axes })
    }

    /// Same range and bin count on every axis.
    pub fn uniform(dim: usize, lo: f64, hi: f64, bins: usize) -> Result<Self> {
        Self::new(vec![AxisBins { lo, hi, bins }; dim])
    }

    /// `[min m_i − 4√λ_max, max m_i + 4√λ_max]` per axis, 200 bins in 1D and
    /// 100 per axis in 2D.
    pub fn default_for(target: &GaussianMixture) -> Result<Self> {
        let bins = match target.dim() {
            1 => 200,
            2 => 100,
            d => {
                return Err(Error::InvalidArgument(format!(
                    "full-space histograms need d <= 2, got {d}; use marginal specs"
                )))
            }
        };
        Ok(Self { axes: (0..target.dim()).map(|i| default_axis(target, i, bins)).collect() })
    }

    /// One-axis spec for the marginal along `axis`, 200 bins.
    pub fn default_marginal(target: &GaussianMixture, axis: usize) -> Result<Self> {
        if axis >= target.dim() {
            return Err(Error::InvalidArgument(format!("axis {axis} out of range for d={}", target.dim())));
        }
        Ok(Self { axes: vec![default_axis(target, axis, 200)] })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[AxisBins] {
        &self.axes
    }

    pub fn n_cells(&self) -> usize {
        self.axes.iter().map(|a| a.bins).product()
    }

    /// Spec restricted to a single axis.
    pub fn axis(&self, axis: usize) -> Result<Self> {
        self.axes
            .get(axis)
            .map(|a| Self { axes: vec![*a] })
            .ok_or_else(|| Error::InvalidArgument(format!("axis {axis} out of range for a {}-axis spec", self.dim())))
    }
}

fn default_axis(target: &GaussianMixture, axis: usize, bins: usize) -> AxisBins {
    let (_, lambda_max) = target.eigen_range();
    let pad = 4.0 * lambda_max.sqrt();
    let coords = (0..target.n_components()).map(|i| target.mean(i)[axis]);
    let lo = coords.clone().fold(f64::INFINITY, f64::min) - pad;
    let hi = coords.fold(f64::NEG_INFINITY, f64::max) + pad;
    AxisBins { lo, hi, bins }
}

/// Target bin masses for a fixed spec, reusable across snapshots.
#[derive(Debug, Clone)]
pub struct BinnedTarget {
    spec: HistogramSpec,
    masses: Vec<f64>,
}

impl BinnedTarget {
    pub fn new(target: &GaussianMixture, spec: &HistogramSpec) -> Result<Self> {
        check_dim(target.dim(), spec.dim())?;
        let masses = match spec.axes.as_slice() {
            [x] => cell_masses_1d(target, x),
            [x, y] => cell_masses_2d(target, x, y),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "full-space histograms need d <= 2, got {}",
                    spec.dim()
                )))
            }
        };
        Ok(Self { spec: spec.clone(), masses })
    }

    pub fn spec(&self) -> &HistogramSpec {
        &self.spec
    }

    /// Target mass per cell, row-major with the last axis fastest.
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Empirical bin counts and the number of out-of-range samples.
    pub fn counts(&self, samples: &Samples) -> Result<(Vec<u64>, usize)> {
        check_dim(self.spec.dim(), samples.dim())?;
        let mut counts = vec![0u64; self.masses.len()];
        let mut outside = 0;
        for row in samples.rows() {
            let mut cell = 0;
            let mut out = false;
            for (a, &x) in self.spec.axes.iter().zip(row) {
                let (b, o) = a.locate(x);
                cell = cell * a.bins + b;
                out |= o;
            }
            counts[cell] += 1;
            outside += out as usize;
        }
        Ok((counts, outside))
    }

    pub fn kl(&self, samples: &Samples) -> Result<KlEstimate> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("KL estimate needs at least one sample".into()));
        }
        let (counts, outside) = self.counts(samples)?;
        let n = samples.len() as f64;
        let raw: f64 = counts
            .iter()
            .zip(&self.masses)
            .filter(|(&c, _)| c > 0)
            .map(|(&c, &q)| {
                let p = c as f64 / n;
                p * (p / q.max(MASS_FLOOR)).ln()
            })
            .sum();
        debug_assert!(raw >= -1e-6, "histogram KL {raw} below quadrature tolerance");
        let out_of_range_fraction = outside as f64 / n;
        Ok(KlEstimate {
            kl: raw.max(0.0),
            raw,
            out_of_range_fraction,
            warning: out_of_range_fraction > OUT_OF_RANGE_WARNING,
        })
    }
}

fn quadrature_nodes(a: &AxisBins, bin: usize) -> impl Iterator<Item = f64> + '_ {
    let w = a.width();
    let sub = w / SUBDIVISIONS as f64;
    let start = a.lo + bin as f64 * w;
    (0..SUBDIVISIONS).map(move |s| start + (s as f64 + 0.5) * sub)
}

fn cell_masses_1d(target: &GaussianMixture, a: &AxisBins) -> Vec<f64> {
    let sub = a.width() / SUBDIVISIONS as f64;
    (0..a.bins)
        .map(|b| {
            quadrature_nodes(a, b)
                .map(|x| target.eval(&[x], &Transform::IDENTITY, None).exp())
                .sum::<f64>()
                * sub
        })
        .collect()
}

fn cell_masses_2d(target: &GaussianMixture, ax: &AxisBins, ay: &AxisBins) -> Vec<f64> {
    let area = ax.width() * ay.width() / (SUBDIVISIONS * SUBDIVISIONS) as f64;
    let mut masses = Vec::with_capacity(ax.bins * ay.bins);
    for bx in 0..ax.bins {
        for by in 0..ay.bins {
            let mut m = 0.0;
            for x in quadrature_nodes(ax, bx) {
                for y in quadrature_nodes(ay, by) {
                    m += target.eval(&[x, y], &Transform::IDENTITY, None).exp();
                }
            }
            masses.push(m * area);
        }
    }
    masses
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    /// Estimate clipped at 0.
    pub kl: f64,
    /// Estimate before clipping; negative only through quadrature error.
    pub raw: f64,
    pub out_of_range_fraction: f64,
    /// More than 5% of the samples fell outside the histogram range.
    pub warning: bool,
}

/// Full-space histogram KL of `samples` against `target` (d ≤ 2).
pub fn histogram_kl(samples: &Samples, target: &GaussianMixture, spec: &HistogramSpec) -> Result<KlEstimate> {
    check_dim(target.dim(), samples.dim())?;
    BinnedTarget::new(target, spec)?.kl(samples)
}

/// Histogram KL of column `axis` against the corresponding target marginal.
/// `spec` is either a one-axis spec or a full spec from which `axis` is taken.
pub fn marginal_kl(samples: &Samples, target: &GaussianMixture, axis: usize, spec: &HistogramSpec) -> Result<KlEstimate> {
    check_dim(target.dim(), samples.dim())?;
    let spec = match spec.dim() {
        1 => spec.clone(),
        d if d == target.dim() => spec.axis(axis)?,
        d => {
            return Err(Error::InvalidArgument(format!(
                "marginal spec must have 1 or {} axes, got {d}",
                target.dim()
            )))
        }
    };
    histogram_kl(&samples.project(axis)?, &target.marginal(axis)?, &spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "axis", rename_all = "snake_case")]
pub enum Estimator {
    FullHistogram,
    Marginal(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlReport {
    pub iteration: u64,
    pub tau: f64,
    pub kl: f64,
    pub estimator: Estimator,
    /// KL of an exact sample of the same size.
    pub baseline_kl: f64,
}

/// Evaluates the discrete KL error bound
///
/// ```text
/// KL₀ exp(−Σ_{i=1}^k 2h_i/C_i)
///   + c Σ_{i=0}^{k−1} exp(−Σ_{j=0}^{i} 2h_{k−j}/C_{k−j}) |τ_{k−i} − τ_{k−1−i}|
///   + c Σ_{i=0}^{k−1} h_{k−i}² exp(−Σ_{j=0}^{i−1} 2h_{k−j}/C_{k−j})
///   + c τ_k
/// ```
///
/// over `history[0..=k]`, with `C_i = c_lsi(τ_i)`. `h_0` does not enter.
pub fn theory_bound(c_lsi: impl Fn(f64) -> f64, history: &[StepRecord], kl0: f64, c: f64) -> Result<f64> {
    let k = history
        .len()
        .checked_sub(1)
        .ok_or_else(|| Error::InvalidArgument("theory bound needs a nonempty history".into()))?;
    if !(kl0 >= 0.0 && c >= 0.0) {
        return Err(Error::InvalidArgument(format!("need kl0 >= 0 and c >= 0, got {kl0}, {c}")));
    }
    let mut decay = Vec::with_capacity(k + 1);
    for (i, r) in history.iter().enumerate() {
        let cl = c_lsi(r.tau);
        if !(cl > 0.0 && cl.is_finite()) {
            return Err(Error::InvalidArgument(format!("C_LSI must be positive, got {cl} at tau={} (entry {i})", r.tau)));
        }
        decay.push(2.0 * r.h / cl);
    }
    // suffix = Σ_{j=m}^{k} 2h_j/C_j, accumulated from j = k downwards.
    let mut suffix = 0.0f64;
    let mut jumps = 0.0;
    let mut discretization = 0.0;
    for m in (1..=k).rev() {
        let h = history[m].h;
        discretization += h * h * (-suffix).exp();
        suffix += decay[m];
        jumps += (-suffix).exp() * (history[m].tau - history[m - 1].tau).abs();
    }
    Ok(kl0 * (-suffix).exp() + c * jumps + c * discretization + c * history[k].tau)
}

/// Heuristic `C_LSI(τ) = 2 λ_max(τ)` from the convolution path's component
/// covariances `(1−τ)Σ_i + τI`.
pub fn convolution_lsi_surrogate(target: &GaussianMixture) -> impl Fn(f64) -> f64 + '_ {
    move |tau| 2.0 * target.eigen_range_transformed(&Transform::convolution(tau)).1
}

/// Unbiased sample mean and covariance.
pub fn moment_report(samples: &Samples) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("moments need at least 2 samples, got {n}")));
    }
    let d = samples.dim();
    let mut mean = DVector::zeros(d);
    for row in samples.rows() {
        mean += DVector::from_column_slice(row);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for row in samples.rows() {
        let c = DVector::from_column_slice(row) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (n - 1) as f64;
    Ok((mean, cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn spec_validation() {
        assert!(HistogramSpec::uniform(1, 1.0, 1.0, 10).is_err());
        assert!(HistogramSpec::uniform(1, 0.0, 1.0, 1).is_err());
        assert!(HistogramSpec::uniform(2, 0.0, 1.0, 1001).is_err());
        assert!(HistogramSpec::uniform(2, 0.0, 1.0, 1000).is_ok());
        let s = HistogramSpec::default_for(&GaussianMixture::reference_1d()).unwrap();
        assert_relative_eq!(s.axes()[0].lo, -3.2, epsilon = 1e-12);
        assert_relative_eq!(s.axes()[0].hi, 3.2, epsilon = 1e-12);
        assert_eq!(s.axes()[0].bins, 200);
        assert_eq!(HistogramSpec::default_for(&GaussianMixture::reference_2d()).unwrap().n_cells(), 10_000);
    }

    #[test]
    fn bin_masses_sum_to_covered_mass() {
        let g = GaussianMixture::standard_normal(1).unwrap();
        let b = BinnedTarget::new(&g, &HistogramSpec::uniform(1, -8.0, 8.0, 200).unwrap()).unwrap();
        assert_relative_eq!(b.masses().iter().sum::<f64>(), 1.0, epsilon = 1e-6);
        let b = BinnedTarget::new(&GaussianMixture::reference_2d(), &HistogramSpec::default_for(&GaussianMixture::reference_2d()).unwrap()).unwrap();
        assert_relative_eq!(b.masses().iter().sum::<f64>(), 1.0, epsilon = 1e-3);
    }

    #[test]
    fn direct_sample_floor() {
        let g = GaussianMixture::reference_1d();
        let spec = HistogramSpec::uniform(1, -4.0, 4.0, 200).unwrap();
        let s = g.sample(5000, &mut rng(1)).unwrap();
        let est = histogram_kl(&s, &g, &spec).unwrap();
        assert!(est.kl > 0.0 && est.kl <= 0.05, "{est:?}");
        assert!(!est.warning);
    }

    #[test]
    fn single_occupied_bin() {
        let g = GaussianMixture::standard_normal(1).unwrap();
        let spec = HistogramSpec::uniform(1, -4.0, 4.0, 8).unwrap();
        let b = BinnedTarget::new(&g, &spec).unwrap();
        let s = Samples::new(vec![0.3; 100], 1).unwrap();
        assert_relative_eq!(b.kl(&s).unwrap().kl, -b.masses()[4].ln(), max_relative = 1e-14);
    }

    #[test]
    fn shifted_gaussian_matches_closed_form() {
        let p = GaussianMixture::gaussian(DVector::from_element(1, 1.0), DMatrix::identity(1, 1)).unwrap();
        let q = GaussianMixture::standard_normal(1).unwrap();
        let s = p.sample(200_000, &mut rng(2)).unwrap();
        let est = histogram_kl(&s, &q, &HistogramSpec::uniform(1, -6.0, 7.0, 200).unwrap()).unwrap();
        assert!((est.kl - 0.5).abs() < 0.03, "{est:?}");
    }

    #[test]
    fn out_of_range_samples_are_clamped_and_flagged() {
        let g = GaussianMixture::standard_normal(1).unwrap();
        let spec = HistogramSpec::uniform(1, -1.0, 1.0, 4).unwrap();
        let s = Samples::new(vec![-5.0, 0.1, 0.2, 7.0, 0.5, -0.5, 0.0, 0.9, 0.3, 0.4], 1).unwrap();
        let b = BinnedTarget::new(&g, &spec).unwrap();
        let (counts, outside) = b.counts(&s).unwrap();
        assert_eq!(outside, 2);
        assert_eq!(counts, vec![1, 1, 5, 3]);
        let est = b.kl(&s).unwrap();
        assert_relative_eq!(est.out_of_range_fraction, 0.2);
        assert!(est.warning);
    }

    #[test]
    fn marginals_of_product_gaussian() {
        let g = GaussianMixture::standard_normal(10).unwrap();
        let mut s = g.sample(5000, &mut rng(3)).unwrap().into_vec();
        let spec = HistogramSpec::uniform(1, -5.0, 5.0, 200).unwrap();
        let exact = Samples::new(s.clone(), 10).unwrap();
        for axis in 0..10 {
            assert!(marginal_kl(&exact, &g, axis, &spec).unwrap().kl <= 0.05);
        }
        s.iter_mut().step_by(10).for_each(|v| *v += 1.0);
        let shifted = Samples::new(s, 10).unwrap();
        let spec = HistogramSpec::uniform(1, -5.0, 6.0, 60).unwrap();
        assert!((marginal_kl(&shifted, &g, 0, &spec).unwrap().kl - 0.5).abs() <= 0.05);
        assert!(marginal_kl(&shifted, &g, 1, &spec).unwrap().kl <= 0.05);
    }

    #[test]
    fn marginal_in_one_dimension_equals_full() {
        let g = GaussianMixture::reference_1d();
        let s = g.sample(1000, &mut rng(4)).unwrap();
        let spec = HistogramSpec::default_for(&g).unwrap();
        assert_eq!(marginal_kl(&s, &g, 0, &spec).unwrap(), histogram_kl(&s, &g, &spec).unwrap());
    }

    fn record(h: f64, tau: f64) -> StepRecord {
        StepRecord { k: 0, h, tau, t: 0.0 }
    }

    #[test]
    fn theory_bound_single_step() {
        let h = vec![record(0.3, 0.9), record(0.2, 0.5)];
        let b = theory_bound(|_| 2.0, &h, 1.5, 0.7).unwrap();
        let expected = 1.5 * (-0.2f64).exp() + 0.7 * (-0.2f64).exp() * 0.4 + 0.7 * 0.04 + 0.7 * 0.5;
        assert_relative_eq!(b, expected, max_relative = 1e-15);
    }

    #[test]
    fn theory_bound_without_steps() {
        let taus = [1.0, 0.7, 0.8, 0.2, 0.1];
        let h: Vec<_> = taus.iter().map(|&t| record(0.0, t)).collect();
        let b = theory_bound(|_| 1.0, &h, 0.4, 2.0).unwrap();
        assert_relative_eq!(b, 0.4 + 2.0 * (0.3 + 0.1 + 0.6 + 0.1) + 2.0 * 0.1, max_relative = 1e-14);
    }

    #[test]
    fn theory_bound_rejects_bad_inputs() {
        assert!(theory_bound(|_| 1.0, &[], 0.0, 1.0).is_err());
        assert!(theory_bound(|_| 0.0, &[record(0.1, 0.0)], 0.0, 1.0).is_err());
        assert!(theory_bound(|t| 1.0 - t, &[record(0.1, 0.0), record(0.1, 1.0)], 0.0, 1.0).is_err());
    }

    #[test]
    fn lsi_surrogate_interpolates() {
        let g = GaussianMixture::reference_1d();
        let f = convolution_lsi_surrogate(&g);
        assert_relative_eq!(f(0.0), 0.18, epsilon = 1e-15);
        assert_relative_eq!(f(1.0), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn moments() {
        let s = Samples::new(vec![1.0, 2.0, 3.0, 6.0], 2).unwrap();
        let (m, c) = moment_report(&s).unwrap();
        assert_eq!(m.as_slice(), &[2.0, 4.0]);
        assert_relative_eq!(c, DMatrix::from_row_slice(2, 2, &[2.0, 4.0, 4.0, 8.0]));
        let (_, c) = moment_report(&Samples::new(vec![0.5; 6], 2).unwrap()).unwrap();
        assert_eq!(c, DMatrix::zeros(2, 2));
        assert!(moment_report(&Samples::new(vec![0.5], 1).unwrap()).is_err());

        let g = GaussianMixture::reference_1d();
        let n = 20_000;
        let (m, _) = moment_report(&g.sample(n, &mut rng(5)).unwrap()).unwrap();
        let sd = g.mixture_covariance()[(0, 0)].sqrt();
        assert!((m[0] - g.mixture_mean()[0]).abs() < 3.0 * sd / (n as f64).sqrt());
    }
}
