//! The oracle suite behind the `verify` command.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::metrics::{histogram_kl, theory_bound, HistogramSpec};
use crate::oracles::{fd_gradient, gaussian_kl, grid_prox, mc_convolution_check, naive_theory_bound, GridSpec};
use crate::paths::{AnnealingPath, Convolution, LinearGaussianLikelihood, MoreauPath, Posterior};
use crate::sampler::StepRecord;
use crate::targets::GaussianMixture;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn from(name: &'static str, outcome: Result<(bool, String)>) -> Self {
        match outcome {
            Ok((passed, detail)) => Self { name, passed, detail },
            Err(e) => Self { name, passed: false, detail: format!("error: {e}") },
        }
    }
}

/// Runs every check against the library's own implementations.
pub fn run_all() -> Vec<Check> {
    let target = GaussianMixture::reference_1d();
    let daz = MoreauPath::with_defaults(Arc::new(target.clone()));
    vec![
        Check::from("score vs finite differences", check_score(&target, |x| target.score(x))),
        Check::from("prox vs grid search", daz.and_then(|p| check_prox(&p))),
        Check::from("convolution path vs Monte Carlo", check_convolution()),
        Check::from("histogram KL vs closed form", check_histogram_kl()),
        Check::from("Gaussian KL formula", check_gaussian_kl()),
        Check::from("theory bound vs direct summation", check_theory_bound()),
        Check::from("posterior gradient identity", check_posterior()),
    ]
}

/// `score` against central differences of the log-density at fixed points,
/// relative tolerance 1e-6.
pub fn check_score(target: &GaussianMixture, score: impl Fn(&[f64]) -> Result<DVector<f64>>) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for x in [-2.3, -1.1, -0.2, 0.7, 1.0, 1.9, 2.6] {
        let fd = fd_gradient(|y| target.log_density(y).expect("1D point"), &[x], 1e-5)?;
        let s = score(&[x])?;
        worst = worst.max((s[0] - fd[0]).abs() / fd[0].abs().max(1.0));
    }
    Ok((worst <= 1e-6, format!("max relative error {worst:.2e}")))
}

/// Moreau prox against exhaustive search on a 1e-5 grid, tolerance 2e-5.
pub fn check_prox(path: &MoreauPath) -> Result<(bool, String)> {
    let target = path.target();
    let u = |y: &[f64]| -target.log_density(y).expect("1D point");
    let mut worst: f64 = 0.0;
    for (x, frac) in [(1.5, 0.5), (-0.9, 0.9), (0.3, 0.2), (-2.4, 0.7)] {
        let tau = frac * path.tau_max();
        let p = path.prox(&[x], tau)?;
        let g = grid_prox(u, &[x], tau, &GridSpec::centered(&[x], 2.5, 1e-5)?)?;
        worst = worst.max((p[0] - g[0]).abs());
    }
    Ok((worst <= 2e-5, format!("max deviation {worst:.2e}")))
}

fn check_convolution() -> Result<(bool, String)> {
    let target = GaussianMixture::reference_1d();
    let spec = HistogramSpec::uniform(1, -4.0, 4.0, 200)?;
    let kl = mc_convolution_check(&target, 0.5, 100_000, &spec, 17)?.kl;
    Ok((kl <= 0.01, format!("kl {kl:.4}")))
}

fn check_histogram_kl() -> Result<(bool, String)> {
    let p = GaussianMixture::gaussian(DVector::from_element(1, 1.0), DMatrix::identity(1, 1))?;
    let q = GaussianMixture::standard_normal(1)?;
    let s = p.sample(100_000, &mut ChaCha8Rng::seed_from_u64(5))?;
    let kl = histogram_kl(&s, &q, &HistogramSpec::uniform(1, -6.0, 7.0, 200)?)?.kl;
    Ok(((kl - 0.5).abs() <= 0.03, format!("kl {kl:.4} (closed form 0.5)")))
}

fn check_gaussian_kl() -> Result<(bool, String)> {
    let z = DVector::zeros(2);
    let i = DMatrix::identity(2, 2);
    let v = gaussian_kl(&z, &(&i * 2.0), &z, &i)?;
    let expected = 1.0 - 2f64.ln();
    Ok(((v - expected).abs() <= 1e-12, format!("{v} vs {expected}")))
}

fn check_theory_bound() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut tau = 1.0;
    let history: Vec<StepRecord> = (0..1000)
        .map(|k| {
            tau *= 1.0 - 0.01 * rng.random::<f64>();
            StepRecord { k, h: 0.05 * rng.random::<f64>(), tau, t: 0.0 }
        })
        .collect();
    let c_lsi = |t: f64| 0.2 + t;
    let fast = theory_bound(c_lsi, &history, 2.0, 1.0)?;
    let naive = naive_theory_bound(c_lsi, &history, 2.0, 1.0);
    let rel = (fast - naive).abs() / naive.abs();
    Ok((rel <= 1e-12, format!("relative difference {rel:.1e}")))
}

fn check_posterior() -> Result<(bool, String)> {
    let prior = Arc::new(GaussianMixture::reference_2d());
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, -0.2, 0.8]);
    let y = DVector::from_vec(vec![0.5, -0.3]);
    let sigma = 0.7;
    let lik = LinearGaussianLikelihood::new(a.clone(), y.clone(), sigma)?;
    let post = Posterior::new(Box::new(Convolution::new(prior.clone())), lik)?;
    let inner = Convolution::new(prior);
    let mut worst: f64 = 0.0;
    for x in [[0.1, 0.2], [1.7, -0.4], [2.2, 2.1]] {
        let diff = post.grad_potential(&x, 0.3)? - inner.grad_potential(&x, 0.3)?;
        let expected = a.transpose() * (&a * DVector::from_row_slice(&x) - &y) / (sigma * sigma);
        worst = worst.max((diff - expected).amax());
    }
    Ok((worst <= 1e-12, format!("max deviation {worst:.1e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::ProxSettings;

    #[test]
    fn suite_passes() {
        for c in run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn corrupted_score_is_caught() {
        let target = GaussianMixture::reference_1d();
        let (ok, _) = check_score(&target, |x| Ok(target.score(x)? * 1.001)).unwrap();
        assert!(!ok);
    }

    #[test]
    fn unconverged_prox_is_caught() {
        let target = Arc::new(GaussianMixture::reference_1d());
        let tau_max = 0.5 * MoreauPath::tau_bound(&target.estimate_constants());
        // single start: the closed-form component starts can already be optimal
        let settings = ProxSettings { max_iterations: 1, multi_start: false, ..ProxSettings::default() };
        let path = MoreauPath::new(target, tau_max, settings).unwrap();
        assert!(!Check::from("prox", check_prox(&path)).passed);
    }
}
