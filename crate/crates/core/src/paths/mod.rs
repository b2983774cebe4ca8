//! Annealing paths `(p_τ)`: families of densities that reach the target at
//! `τ = 0` and are easier to sample for larger `τ`.
//!
//! Every path exposes the drift ingredient `∇U_τ = −∇log p_τ` and the pair
//! `(a_τ, L_τ)` (dissipativity and Lipschitz constants) that bounds the
//! Euler–Maruyama step size.

mod moreau;
mod posterior;

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::targets::{GaussianMixture, TargetConstants, Transform};

pub use moreau::{MoreauPath, ProxSettings, StepRule};
pub use posterior::{LinearGaussianLikelihood, Posterior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathVariant {
    Identity,
    Tempering,
    Dilation,
    Daz,
    Convolution,
    Posterior,
}

impl PathVariant {
    pub fn name(self) -> &'static str {
        match self {
            PathVariant::Identity => "identity",
            PathVariant::Tempering => "tempering",
            PathVariant::Dilation => "dilation",
            PathVariant::Daz => "daz",
            PathVariant::Convolution => "convolution",
            PathVariant::Posterior => "posterior",
        }
    }
}

impl fmt::Display for PathVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Dissipativity constant `a_τ` and gradient Lipschitz constant `L_τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConstants {
    pub a: f64,
    pub lipschitz: f64,
}

impl StepConstants {
    /// `a_τ / L_τ²`, the supremum of admissible step sizes.
    pub fn step_cap(&self) -> f64 {
        self.a / (self.lipschitz * self.lipschitz)
    }
}

pub trait AnnealingPath: Send + Sync + fmt::Debug {
    fn variant(&self) -> PathVariant;

    /// The mixture at `τ = 0` (the prior, for posterior paths).
    fn target(&self) -> &GaussianMixture;

    fn dim(&self) -> usize {
        self.target().dim()
    }

    /// Largest admissible `τ`.
    fn tau_max(&self) -> f64;

    /// `U_τ(x)`, up to an additive constant that may depend on `τ` but not on `x`.
    fn potential(&self, x: &[f64], tau: f64) -> Result<f64>;

    /// Writes `∇U_τ(x)` into `out`.
    fn grad_potential_into(&self, x: &[f64], tau: f64, out: &mut [f64]) -> Result<()>;

    fn step_constants(&self, tau: f64) -> Result<StepConstants>;

    fn grad_potential(&self, x: &[f64], tau: f64) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim());
        self.grad_potential_into(x, tau, out.as_mut_slice())?;
        Ok(out)
    }

    fn check_tau(&self, tau: f64) -> Result<()> {
        if !(tau >= 0.0 && tau <= self.tau_max()) {
            return Err(Error::TauOutOfDomain {
                path: self.variant().name(),
                tau,
                tau_max: self.tau_max(),
            });
        }
        Ok(())
    }
}

fn check_io(dim: usize, x: &[f64], out: &[f64]) -> Result<()> {
    check_dim(dim, x.len())?;
    check_dim(dim, out.len())
}

fn check_tau_max(tau_max: f64, open_upper: f64, path: &str) -> Result<()> {
    if !(tau_max > 0.0 && tau_max < open_upper) {
        return Err(Error::InvalidArgument(format!(
            "{path} tau_max must lie in (0, {open_upper}), got {tau_max}"
        )));
    }
    Ok(())
}

/// Plain Langevin on the target; `τ` is ignored.
#[derive(Debug, Clone)]
pub struct Identity {
    target: Arc<GaussianMixture>,
    constants: TargetConstants,
}

impl Identity {
    pub fn new(target: Arc<GaussianMixture>) -> Self {
        let constants = target.estimate_constants();
        Self { target, constants }
    }
}

impl AnnealingPath for Identity {
    fn variant(&self) -> PathVariant {
        PathVariant::Identity
    }

    fn target(&self) -> &GaussianMixture {
        &self.target
    }

    fn tau_max(&self) -> f64 {
        1.0
    }

    fn potential(&self, x: &[f64], tau: f64) -> Result<f64> {
        self.check_tau(tau)?;
        Ok(-self.target.log_density(x)?)
    }

    fn grad_potential_into(&self, x: &[f64], tau: f64, out: &mut [f64]) -> Result<()> {
        self.check_tau(tau)?;
        check_io(self.dim(), x, out)?;
        self.target.eval(x, &Transform::IDENTITY, Some(&mut *out));
        out.iter_mut().for_each(|v| *v = -*v);
        Ok(())
    }

    fn step_constants(&self, tau: f64) -> Result<StepConstants> {
        self.check_tau(tau)?;
        Ok(StepConstants {
            a: self.constants.dissipativity_a,
            lipschitz: self.constants.lipschitz,
        })
    }
}

/// Geometric tempering `p_τ ∝ p_1^τ p_0^{1−τ}`, so `U_τ = (1−τ)U_0 + τU_1`.
#[derive(Debug, Clone)]
pub struct GeometricTempering {
    target: Arc<GaussianMixture>,
    reference: Arc<GaussianMixture>,
    target_constants: TargetConstants,
    reference_constants: TargetConstants,
}

impl GeometricTempering {
    pub fn new(target: Arc<GaussianMixture>, reference: Arc<GaussianMixture>) -> Result<Self> {
        check_dim(target.dim(), reference.dim())?;
        Ok(Self {
            target_constants: target.estimate_constants(),
            reference_constants: reference.estimate_constants(),
            target,
            reference,
        })
    }

    /// Reference `N(0, λ_max·I)` with `λ_max` the largest covariance
    /// eigenvalue of the target.
    pub fn with_default_reference(target: Arc<GaussianMixture>) -> Result<Self> {
        let (_, hi) = target.eigen_range();
        let reference = Arc::new(GaussianMixture::isotropic(target.dim(), hi.sqrt())?);
        Self::new(target, reference)
    }

    pub fn reference(&self) -> &GaussianMixture {
        &self.reference
    }
}

impl AnnealingPath for GeometricTempering {
    fn variant(&self) -> PathVariant {
        PathVariant::Tempering
    }

    fn target(&self) -> &GaussianMixture {
        &self.target
    }

    fn tau_max(&self) -> f64 {
        1.0
    }

    fn potential(&self, x: &[f64], tau: f64) -> Result<f64> {
        self.check_tau(tau)?;
        Ok(-(1.0 - tau) * self.target.log_density(x)? - tau * self.reference.log_density(x)?)
    }

    fn grad_potential_into(&self, x: &[f64], tau: f64, out: &mut [f64]) -> Result<()> {
        self.check_tau(tau)?;
        check_io(self.dim(), x, out)?;
        let mut reference: smallvec::SmallVec<[f64; 16]> = smallvec::smallvec![0.0; x.len()];
        self.target.eval(x, &Transform::IDENTITY, Some(&mut *out));
        self.reference.eval(x, &Transform::IDENTITY, Some(&mut reference));
        for (o, r) in out.iter_mut().zip(&reference) {
            *o = -(1.0 - tau) * *o - tau * r;
        }
        Ok(())
    }

    fn step_constants(&self, tau: f64) -> Result<StepConstants> {
        self.check_tau(tau)?;
        let (t, r) = (&self.target_constants, &self.reference_constants);
        Ok(StepConstants {
            a: t.dissipativity_a.min(r.dissipativity_a),
            lipschitz: (1.0 - tau) * t.lipschitz + tau * r.lipschitz,
        })
    }
}

/// Dilation `p_τ(x) = (1−τ)^{−d/2} p(x/√(1−τ))` on `[0, τ̄]` with `τ̄ < 1`.
#[derive(Debug, Clone)]
pub struct Dilation {
    target: Arc<GaussianMixture>,
    constants: TargetConstants,
    tau_max: f64,
}

impl Dilation {
    pub const DEFAULT_TAU_MAX: f64 = 0.99;

    pub fn new(target: Arc<GaussianMixture>, tau_max: f64) -> Result<Self> {
        check_tau_max(tau_max, 1.0, "dilation")?;
        Ok(Self {
            constants: target.estimate_constants(),
            target,
            tau_max,
        })
    }
}

impl AnnealingPath for Dilation {
    fn variant(&self) -> PathVariant {
        PathVariant::Dilation
    }

    fn target(&self) -> &GaussianMixture {
        &self.target
    }

    fn tau_max(&self) -> f64 {
        self.tau_max
    }

    fn potential(&self, x: &[f64], tau: f64) -> Result<f64> {
        self.check_tau(tau)?;
        let s = (1.0 - tau).sqrt();
        let scaled: Vec<f64> = x.iter().map(|v| v / s).collect();
        Ok(-self.target.log_density(&scaled)? + 0.5 * x.len() as f64 * (1.0 - tau).ln())
    }

    fn grad_potential_into(&self, x: &[f64], tau: f64, out: &mut [f64]) -> Result<()> {
        self.check_tau(tau)?;
        check_io(self.dim(), x, out)?;
        let s = (1.0 - tau).sqrt();
        let scaled: smallvec::SmallVec<[f64; 16]> = x.iter().map(|v| v / s).collect();
        self.target.eval(&scaled, &Transform::IDENTITY, Some(&mut *out));
        out.iter_mut().for_each(|v| *v = -*v / s);
        Ok(())
    }

    fn step_constants(&self, tau: f64) -> Result<StepConstants> {
        self.check_tau(tau)?;
        Ok(StepConstants {
            a: self.constants.dissipativity_a,
            lipschitz: self.constants.lipschitz / (1.0 - tau),
        })
    }
}

/// Variance-preserving convolution: the law of `√(1−τ)X + √τ Z`,
/// `X ~ target`, `Z ~ N(0, I)`. For a mixture this is again a mixture with
/// means `√(1−τ)m_i` and covariances `(1−τ)Σ_i + τI`.
#[derive(Debug, Clone)]
pub struct Convolution {
    target: Arc<GaussianMixture>,
}

impl Convolution {
    pub fn new(target: Arc<GaussianMixture>) -> Self {
        Self { target }
    }

    /// The analytic law `p_τ` as a standalone mixture.
    pub fn mixture_at(&self, tau: f64) -> Result<GaussianMixture> {
        self.check_tau(tau)?;
        self.target.transformed(&Transform::convolution(tau))
    }
}

impl AnnealingPath for Convolution {
    fn variant(&self) -> PathVariant {
        PathVariant::Convolution
    }

    fn target(&self) -> &GaussianMixture {
        &self.target
    }

    fn tau_max(&self) -> f64 {
        1.0
    }

    fn potential(&self, x: &[f64], tau: f64) -> Result<f64> {
        self.check_tau(tau)?;
        check_dim(self.dim(), x.len())?;
        Ok(-self.target.eval(x, &Transform::convolution(tau), None))
    }

    fn grad_potential_into(&self, x: &[f64], tau: f64, out: &mut [f64]) -> Result<()> {
        self.check_tau(tau)?;
        check_io(self.dim(), x, out)?;
        self.target.eval(x, &Transform::convolution(tau), Some(&mut *out));
        out.iter_mut().for_each(|v| *v = -*v);
        Ok(())
    }

    /// Recomputed from the transformed spectrum `(1−τ)λ + τ`.
    fn step_constants(&self, tau: f64) -> Result<StepConstants> {
        self.check_tau(tau)?;
        let (lo, hi) = self.target.eigen_range_transformed(&Transform::convolution(tau));
        Ok(StepConstants {
            a: 1.0 / hi,
            lipschitz: 1.0 / lo,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference() -> Arc<GaussianMixture> {
        Arc::new(GaussianMixture::reference_1d())
    }

    #[test]
    fn identity_on_standard_normal_is_x() {
        let p = Identity::new(Arc::new(GaussianMixture::standard_normal(3).unwrap()));
        let x = [0.5, -1.0, 2.0];
        for tau in [0.0, 0.3, 1.0] {
            assert_eq!(p.grad_potential(&x, tau).unwrap().as_slice(), &x);
        }
    }

    #[test]
    fn convolution_endpoint_is_standard_normal_drift() {
        let p = Convolution::new(reference());
        for x in [-3.0, 0.2, 1.7] {
            assert_relative_eq!(p.grad_potential(&[x], 1.0).unwrap()[0], x, epsilon = 1e-12);
        }
        let c = p.step_constants(1.0).unwrap();
        assert_relative_eq!(c.a, 1.0);
        assert_relative_eq!(c.lipschitz, 1.0);
        let c = p.step_constants(0.5).unwrap();
        assert_relative_eq!(c.lipschitz, 1.0 / 0.505, max_relative = 1e-12);
        assert_relative_eq!(c.a, 1.0 / (0.5 * 0.09 + 0.5), max_relative = 1e-12);
    }

    #[test]
    fn convolution_matches_explicit_mixture() {
        let p = Convolution::new(reference());
        let m = p.mixture_at(0.3).unwrap();
        for x in [-1.9, 0.05, 2.5] {
            assert_relative_eq!(p.grad_potential(&[x], 0.3).unwrap()[0], -m.score(&[x]).unwrap()[0], max_relative = 1e-12);
        }
    }

    #[test]
    fn dilation_closed_form() {
        let p = Dilation::new(Arc::new(GaussianMixture::standard_normal(1).unwrap()), 0.99).unwrap();
        assert_relative_eq!(p.grad_potential(&[1.5], 0.75).unwrap()[0], 6.0, epsilon = 1e-12);
        let c = p.step_constants(0.75).unwrap();
        assert_relative_eq!(c.lipschitz, 4.0);
        assert!(Dilation::new(reference(), 1.0).is_err());
    }

    #[test]
    fn tempering_combines_scores() {
        let target = reference();
        let std_normal = Arc::new(GaussianMixture::standard_normal(1).unwrap());
        let p = GeometricTempering::new(target.clone(), std_normal).unwrap();
        let expected = 0.5 * -target.score(&[1.0]).unwrap()[0] + 0.5 * 1.0;
        assert_relative_eq!(p.grad_potential(&[1.0], 0.5).unwrap()[0], expected, max_relative = 1e-14);
        let c = p.step_constants(0.5).unwrap();
        assert_relative_eq!(c.lipschitz, 0.5 * 100.0 + 0.5 * 1.0, max_relative = 1e-12);
        assert_relative_eq!(c.a, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn default_tempering_reference_uses_widest_component() {
        let p = GeometricTempering::with_default_reference(reference()).unwrap();
        assert_relative_eq!(p.reference().covariance(0)[(0, 0)], 0.09, max_relative = 1e-12);
    }

    #[test]
    fn identity_constants_ignore_tau() {
        let p = Identity::new(reference());
        for tau in [0.0, 0.4, 1.0] {
            let c = p.step_constants(tau).unwrap();
            assert_relative_eq!(c.a, 1.0 / 0.09, max_relative = 1e-12);
            assert_relative_eq!(c.lipschitz, 100.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn out_of_domain_tau_is_rejected() {
        let p = Dilation::new(reference(), 0.9).unwrap();
        assert!(matches!(p.grad_potential(&[0.0], 0.95), Err(Error::TauOutOfDomain { .. })));
        assert!(p.step_constants(-0.1).is_err());
        assert!(Convolution::new(reference()).grad_potential(&[0.0], 1.5).is_err());
        assert!(Convolution::new(reference()).grad_potential(&[0.0], f64::NAN).is_err());
    }

    #[test]
    fn endpoints_agree_with_target_score() {
        let target = reference();
        let paths: Vec<Box<dyn AnnealingPath>> = vec![
            Box::new(Identity::new(target.clone())),
            Box::new(GeometricTempering::with_default_reference(target.clone()).unwrap()),
            Box::new(Dilation::new(target.clone(), 0.99).unwrap()),
            Box::new(Convolution::new(target.clone())),
        ];
        for p in &paths {
            for x in [-2.3, -0.4, 0.9, 3.1] {
                let g = p.grad_potential(&[x], 0.0).unwrap()[0];
                let s = target.score(&[x]).unwrap()[0];
                assert!((g + s).abs() <= 1e-8 * (1.0 + s.abs()), "{}: {g} vs {}", p.variant(), -s);
            }
        }
    }
}
