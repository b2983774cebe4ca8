//! Moreau-envelope path ("diffusion at absolute zero").
//!
//! `U_τ = M_U^τ`, the Moreau envelope `inf_y U(y) + |x−y|²/(2τ)`, whose
//! gradient is `(x − prox_{τU}(x))/τ`. The prox is found by gradient descent
//! on the inner objective, warm-started at `y = x`, with the fixed step
//! `1/(1/τ + L)` (`L` bounds the curvature of `U` from above).
//!
//! The weak-convexity estimate `α = L` is not always an upper bound: for
//! well-separated narrow modes the potential bends down much harder between
//! modes than `L`, and the inner objective may have several local minima for
//! `τ < 1/L`. After the warm-started descent converges, the closed-form prox
//! of every single component is checked as a candidate start; a descent from
//! any candidate whose objective is already lower replaces the incumbent.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use super::{check_io, check_tau_max, AnnealingPath, PathVariant, StepConstants};
use crate::error::{check_dim, Error, Result};
use crate::targets::{GaussianMixture, TargetConstants, Transform};

type Buf = SmallVec<[f64; 16]>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Step `1/(1/τ + L)`.
    Fixed,
    /// Armijo backtracking starting from twice the fixed step.
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxSettings {
    /// Stop once the inner gradient norm is at most this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub step_rule: StepRule,
    /// Try the per-component closed-form proxes as additional starts.
    pub multi_start: bool,
}

impl Default for ProxSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 10_000,
            step_rule: StepRule::Fixed,
            multi_start: true,
        }
    }
}

impl ProxSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::InvalidArgument(format!(
                "prox tolerance must be positive and max_iterations at least 1 (got {}, {})",
                self.tolerance, self.max_iterations
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MoreauPath {
    target: Arc<GaussianMixture>,
    constants: TargetConstants,
    tau_max: f64,
    settings: ProxSettings,
}

impl MoreauPath {
    /// Admissible `τ` lie strictly below this: `min(1/α, 1/L)`.
    pub fn tau_bound(constants: &TargetConstants) -> f64 {
        (1.0 / constants.weak_convexity).min(1.0 / constants.lipschitz)
    }

    pub fn new(target: Arc<GaussianMixture>, tau_max: f64, settings: ProxSettings) -> Result<Self> {
        settings.validate()?;
        let constants = target.estimate_constants();
        check_tau_max(tau_max, Self::tau_bound(&constants), "daz")?;
        Ok(Self {
            target,
            constants,
            tau_max,
            settings,
        })
    }

    /// `τ̄` at half of the admissible range.
    pub fn with_defaults(target: Arc<GaussianMixture>) -> Result<Self> {
        let tau_max = 0.5 * Self::tau_bound(&target.estimate_constants());
        Self::new(target, tau_max, ProxSettings::default())
    }

    pub fn settings(&self) -> &ProxSettings {
        &self.settings
    }

    /// `prox_{τU}(x) = argmin_y U(y) + |x−y|²/(2τ)`.
    pub fn prox(&self, x: &[f64], tau: f64) -> Result<nalgebra::DVector<f64>> {
        let mut out = nalgebra::DVector::zeros(self.dim());
        self.prox_into(x, tau, out.as_mut_slice())?;
        Ok(out)
    }

    /// Writes the prox into `out` and returns the envelope value `M_U^τ(x)`.
    pub fn prox_into(&self, x: &[f64], tau: f64, out: &mut [f64]) -> Result<f64> {
        check_io(self.dim(), x, out)?;
        let bound = Self::tau_bound(&self.constants);
        if !(tau > 0.0 && tau < bound) {
            return Err(Error::InvalidArgument(format!(
                "prox requires 0 < tau < {bound}, got {tau}"
            )));
        }
        out.copy_from_slice(x);
        let best = if self.settings.multi_start {
            self.multi_start(x, tau, out)
        } else {
            self.descend(x, tau, out)
        };
        // A start that stalls on a flat shoulder is harmless when another
        // start reaches a lower minimum; only the winner has to converge.
        if best.converged {
            Ok(best.value)
        } else {
            Err(Error::ProxNotConverged {
                iterations: self.settings.max_iterations,
                grad_norm: best.grad_norm,
                tolerance: self.settings.tolerance,
            })
        }
    }

    /// Descends from `x` and from every per-component closed-form prox,
    /// lowest starting objective first, keeping the lowest minimum.
    fn multi_start(&self, x: &[f64], tau: f64, out: &mut [f64]) -> Descent {
        let n = self.target.n_components();
        let mut candidate: Buf = SmallVec::from_elem(0.0, x.len());
        // index n stands for the warm start y = x
        let start = |i: usize, y: &mut [f64]| {
            if i == n {
                y.copy_from_slice(x);
            } else {
                self.target.component_prox(i, x, tau, y);
            }
        };
        let mut order: SmallVec<[(f64, usize); 8]> = (0..=n)
            .map(|i| {
                start(i, &mut candidate);
                (self.objective(x, tau, &candidate), i)
            })
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut best: Option<Descent> = None;
        for (initial, i) in order {
            if let Some(b) = best {
                // a start already worse than a converged minimum cannot win
                if b.converged && initial >= b.value - 1e-12 * (1.0 + b.value.abs()) {
                    break;
                }
            }
            start(i, &mut candidate);
            let run = self.descend(x, tau, &mut candidate);
            let better = match best {
                None => true,
                Some(b) => {
                    let margin = 1e-12 * (1.0 + b.value.abs());
                    run.value < b.value - margin || (run.converged && !b.converged && run.value <= b.value + margin)
                }
            };
            if better {
                best = Some(run);
                out.copy_from_slice(&candidate);
            }
        }
        best.expect("at least one start")
    }

    fn objective(&self, x: &[f64], tau: f64, y: &[f64]) -> f64 {
        -self.target.eval(y, &Transform::IDENTITY, None) + sq_dist(x, y) / (2.0 * tau)
    }

    /// Objective value and gradient at `y`, plus the size of the rounding
    /// error in that gradient.
    fn objective_grad(&self, x: &[f64], tau: f64, y: &[f64], grad: &mut [f64]) -> (f64, f64) {
        let log_p = self.target.eval(y, &Transform::IDENTITY, Some(&mut *grad));
        let noise = 4.0 * f64::EPSILON * (norm(grad) + (norm(x) + norm(y)) / tau);
        for ((g, yj), xj) in grad.iter_mut().zip(y).zip(x) {
            *g = -*g + (yj - xj) / tau;
        }
        (-log_p + sq_dist(x, y) / (2.0 * tau), noise)
    }

    /// Gradient descent from `y` in place.
    fn descend(&self, x: &[f64], tau: f64, y: &mut [f64]) -> Descent {
        let fixed = 1.0 / (1.0 / tau + self.constants.lipschitz);
        let tol = self.settings.tolerance;
        let mut grad: Buf = SmallVec::from_elem(0.0, x.len());
        let mut trial: Buf = SmallVec::from_elem(0.0, x.len());
        let mut step = 2.0 * fixed;
        // For tiny τ the `(y−x)/τ` term alone carries rounding error above
        // any fixed tolerance, so the bar is never set below that floor.
        let (mut value, mut noise) = self.objective_grad(x, tau, y, &mut grad);
        let mut norm = norm(&grad);
        for _ in 0..self.settings.max_iterations {
            if norm <= tol.max(noise) {
                break;
            }
            match self.settings.step_rule {
                StepRule::Fixed => {
                    for (yj, g) in y.iter_mut().zip(&grad) {
                        *yj -= fixed * g;
                    }
                }
                StepRule::Backtracking => {
                    step = (2.0 * step).min(4.0 * fixed);
                    loop {
                        for ((t, yj), g) in trial.iter_mut().zip(y.iter()).zip(&grad) {
                            *t = yj - step * g;
                        }
                        let f = self.objective(x, tau, &trial);
                        if f <= value - 0.5 * step * norm * norm || step <= fixed * 1e-6 {
                            break;
                        }
                        step *= 0.5;
                    }
                    y.copy_from_slice(&trial);
                }
            }
            (value, noise) = self.objective_grad(x, tau, y, &mut grad);
            norm = self::norm(&grad);
        }
        Descent { value, grad_norm: norm, converged: norm <= tol.max(noise) }
    }
}

#[derive(Debug, Clone, Copy)]
struct Descent {
    value: f64,
    grad_norm: f64,
    converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|g| g * g).sum::<f64>().sqrt()
}

impl AnnealingPath for MoreauPath {
    fn variant(&self) -> PathVariant {
        PathVariant::Daz
    }

    fn target(&self) -> &GaussianMixture {
        &self.target
    }

    fn tau_max(&self) -> f64 {
        self.tau_max
    }

    /// The envelope value itself; `U` at `τ = 0`.
    fn potential(&self, x: &[f64], tau: f64) -> Result<f64> {
        self.check_tau(tau)?;
        check_dim(self.dim(), x.len())?;
        if tau == 0.0 {
            return Ok(-self.target.log_density(x)?);
        }
        let mut y: Buf = SmallVec::from_elem(0.0, x.len());
        self.prox_into(x, tau, &mut y)
    }

    fn grad_potential_into(&self, x: &[f64], tau: f64, out: &mut [f64]) -> Result<()> {
        self.check_tau(tau)?;
        check_io(self.dim(), x, out)?;
        if tau == 0.0 {
            self.target.eval(x, &Transform::IDENTITY, Some(&mut *out));
            out.iter_mut().for_each(|v| *v = -*v);
            return Ok(());
        }
        self.prox_into(x, tau, out)?;
        for (o, xj) in out.iter_mut().zip(x) {
            *o = (xj - *o) / tau;
        }
        Ok(())
    }

    /// `L_τ = L/(1−τL)`; `a_τ = max(a(1−τL), a/2)`.
    fn step_constants(&self, tau: f64) -> Result<StepConstants> {
        self.check_tau(tau)?;
        let c = &self.constants;
        let shrink = 1.0 - tau * c.lipschitz;
        Ok(StepConstants {
            a: (c.dissipativity_a * shrink).max(0.5 * c.dissipativity_a),
            lipschitz: c.lipschitz / shrink,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn std_normal_path(tau_max: f64) -> MoreauPath {
        MoreauPath::new(Arc::new(GaussianMixture::standard_normal(1).unwrap()), tau_max, ProxSettings::default()).unwrap()
    }

    #[test]
    fn quadratic_prox_closed_form() {
        let p = std_normal_path(0.9);
        for (x, tau) in [(1.0, 0.5), (-2.0, 0.25), (3.0, 0.8)] {
            let y = p.prox(&[x], tau).unwrap()[0];
            assert_relative_eq!(y, x / (1.0 + tau), epsilon = 1e-10);
            assert_relative_eq!(p.grad_potential(&[x], tau).unwrap()[0], x / (1.0 + tau), epsilon = 1e-9);
        }
    }

    #[test]
    fn gaussian_prox_solves_linear_system() {
        let cov = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        let m = DVector::from_vec(vec![1.0, -0.5]);
        let target = Arc::new(GaussianMixture::gaussian(m.clone(), cov.clone()).unwrap());
        let bound = MoreauPath::tau_bound(&target.estimate_constants());
        let tau = 0.8 * bound;
        let p = MoreauPath::new(target, 0.9 * bound, ProxSettings { multi_start: false, ..Default::default() }).unwrap();
        let x = DVector::from_vec(vec![0.3, 0.9]);
        let prec = cov.try_inverse().unwrap();
        let lhs = &prec + DMatrix::identity(2, 2) / tau;
        let rhs = &prec * &m + &x / tau;
        let expected = lhs.lu().solve(&rhs).unwrap();
        assert_relative_eq!(p.prox(x.as_slice(), tau).unwrap(), expected, epsilon = 1e-10);
    }

    #[test]
    fn constants_follow_lipschitz_bound() {
        let target = Arc::new(GaussianMixture::reference_1d());
        let p = MoreauPath::new(target, 0.009, ProxSettings::default()).unwrap();
        let c0 = p.step_constants(0.0).unwrap();
        assert_relative_eq!(c0.lipschitz, 100.0, max_relative = 1e-12);
        assert_relative_eq!(c0.a, 1.0 / 0.09, max_relative = 1e-12);
        let c = p.step_constants(0.002).unwrap();
        assert_relative_eq!(c.lipschitz, 100.0 / 0.8, max_relative = 1e-12);
        assert_relative_eq!(c.a, 0.8 / 0.09, max_relative = 1e-12);
        // floored at a/2
        let c = p.step_constants(0.008).unwrap();
        assert_relative_eq!(c.a, 0.5 / 0.09, max_relative = 1e-12);
    }

    #[test]
    fn rejects_inadmissible_tau() {
        let target = Arc::new(GaussianMixture::reference_1d());
        assert!(MoreauPath::new(target.clone(), 0.01, ProxSettings::default()).is_err());
        let p = MoreauPath::with_defaults(target).unwrap();
        assert_relative_eq!(p.tau_max(), 0.005, max_relative = 1e-12);
        assert!(p.prox(&[0.0], 0.0).is_err());
        assert!(p.grad_potential(&[0.0], 0.006).is_err());
    }

    #[test]
    fn non_convergence_carries_gradient_norm() {
        let target = Arc::new(GaussianMixture::reference_1d());
        let settings = ProxSettings { max_iterations: 1, multi_start: false, ..Default::default() };
        let p = MoreauPath::new(target, 0.009, settings).unwrap();
        match p.grad_potential(&[1.3], 0.008) {
            Err(Error::ProxNotConverged { iterations, grad_norm, .. }) => {
                assert_eq!(iterations, 1);
                assert!(grad_norm > 1e-10);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
        assert!(ProxSettings { tolerance: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn backtracking_agrees_with_fixed_step() {
        let target = Arc::new(GaussianMixture::reference_1d());
        let fixed = MoreauPath::new(target.clone(), 0.009, ProxSettings::default()).unwrap();
        let bt = MoreauPath::new(target, 0.009, ProxSettings { step_rule: StepRule::Backtracking, ..Default::default() }).unwrap();
        for (x, tau) in [(1.5, 0.005), (-2.7, 0.001), (0.3, 0.008)] {
            assert_relative_eq!(fixed.prox(&[x], tau).unwrap()[0], bt.prox(&[x], tau).unwrap()[0], epsilon = 1e-9);
        }
    }

    #[test]
    fn multi_start_finds_lower_basin() {
        // A point where the warm start lands in the shallower of two basins.
        let target = Arc::new(GaussianMixture::reference_1d());
        let single = MoreauPath::new(target.clone(), 0.009, ProxSettings { multi_start: false, ..Default::default() }).unwrap();
        let multi = MoreauPath::new(target, 0.009, ProxSettings::default()).unwrap();
        let (x, tau) = (-0.7264069090467098, 0.004580795604861192);
        let a = single.prox(&[x], tau).unwrap()[0];
        let b = multi.prox(&[x], tau).unwrap()[0];
        assert!(multi.objective(&[x], tau, &[b]) < single.objective(&[x], tau, &[a]));
    }

    #[test]
    fn gradient_is_the_moreau_identity_and_inverse_tau_lipschitz() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        // below 1/2475 the prox of the reference mixture has no jumps
        let tau = 3e-4;
        let p = MoreauPath::with_defaults(Arc::new(GaussianMixture::reference_1d())).unwrap();
        for _ in 0..200 {
            let (x, y) = (rng.random_range(-3.5..3.5), rng.random_range(-3.5..3.5));
            let gx = p.grad_potential(&[x], tau).unwrap()[0];
            let gy = p.grad_potential(&[y], tau).unwrap()[0];
            assert_eq!(gx, (x - p.prox(&[x], tau).unwrap()[0]) / tau);
            assert!((gx - gy).abs() <= (x - y).abs() / tau + 1e-9, "x={x} y={y}");
        }
    }
}
