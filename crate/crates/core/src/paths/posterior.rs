//! Posterior paths for linear inverse problems `y = Ax + ε`, `ε ~ N(0, σ²I)`.
//!
//! The prior follows any annealing path; the likelihood is fixed in `τ`, so
//! `∇U_τ(x) = σ⁻²Aᵀ(Ax − y) + ∇U_X^τ(x)` and the Lipschitz constant grows by
//! exactly `σ⁻²‖AᵀA‖`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{check_io, AnnealingPath, PathVariant, StepConstants};
use crate::error::{check_dim, Error, Result};
use crate::targets::GaussianMixture;

#[derive(Debug, Clone)]
pub struct LinearGaussianLikelihood {
    matrix: DMatrix<f64>,
    observation: DVector<f64>,
    noise_sigma: f64,
    /// `‖AᵀA‖₂`
    gram_norm: f64,
}

impl LinearGaussianLikelihood {
    pub fn new(matrix: DMatrix<f64>, observation: DVector<f64>, noise_sigma: f64) -> Result<Self> {
        if matrix.nrows() != observation.len() || matrix.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "forward operator is {}x{} but the observation has length {}",
                matrix.nrows(),
                matrix.ncols(),
                observation.len()
            )));
        }
        if !(noise_sigma > 0.0 && noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise sigma must be positive, got {noise_sigma}")));
        }
        let gram = matrix.transpose() * &matrix;
        let gram_norm = SymmetricEigen::new(gram).eigenvalues.amax();
        Ok(Self {
            matrix,
            observation,
            noise_sigma,
            gram_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn observation(&self) -> &DVector<f64> {
        &self.observation
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    /// `σ⁻²‖AᵀA‖`, the Lipschitz constant of the likelihood gradient.
    pub fn lipschitz(&self) -> f64 {
        self.gram_norm / (self.noise_sigma * self.noise_sigma)
    }

    /// `|Ax − y|²/(2σ²)`
    pub fn neg_log_likelihood(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let r = self.residual(x);
        Ok(r.norm_squared() / (2.0 * self.noise_sigma * self.noise_sigma))
    }

    /// Writes `σ⁻²Aᵀ(Ax − y)` into `out`.
    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_io(self.dim(), x, out)?;
        let r = self.residual(x);
        let s2 = self.noise_sigma * self.noise_sigma;
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.matrix.column(j).dot(&r) / s2;
        }
        Ok(())
    }

    fn residual(&self, x: &[f64]) -> DVector<f64> {
        let mut r = -self.observation.clone();
        for (j, xj) in x.iter().enumerate() {
            r.axpy(*xj, &self.matrix.column(j), 1.0);
        }
        r
    }

    /// Exact posterior of a Gaussian-mixture prior: again a mixture, with
    /// component precisions `Σ_i⁻¹ + σ⁻²AᵀA` and weights reweighted by the
    /// evidence `N(y; A m_i, σ²I + AΣ_iAᵀ)`.
    pub fn posterior_mixture(&self, prior: &GaussianMixture) -> Result<GaussianMixture> {
        check_dim(self.dim(), prior.dim())?;
        let s2 = self.noise_sigma * self.noise_sigma;
        let at = self.matrix.transpose();
        let gram = &at * &self.matrix / s2;
        let k = self.observation.len();
        let mut log_w = Vec::new();
        let mut means = Vec::new();
        let mut covs = Vec::new();
        for (i, alpha) in prior.weights().into_iter().enumerate() {
            let cov = prior.covariance(i);
            let mean = prior.mean(i);
            let prec = cov.clone().try_inverse().ok_or_else(|| Error::InvalidMixture("singular prior covariance".into()))?;
            let post_cov = (&prec + &gram)
                .try_inverse()
                .ok_or_else(|| Error::InvalidMixture("singular posterior precision".into()))?;
            let post_cov = (&post_cov + post_cov.transpose()) * 0.5;
            let post_mean = &post_cov * (&prec * mean + &at * &self.observation / s2);
            let evidence_cov = &self.matrix * cov * &at + DMatrix::identity(k, k) * s2;
            let evidence = GaussianMixture::gaussian(&self.matrix * mean, evidence_cov)?;
            log_w.push(alpha.ln() + evidence.log_density(self.observation.as_slice())?);
            means.push(post_mean);
            covs.push(post_cov);
        }
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        GaussianMixture::new(w, means, covs)
    }
}

/// Posterior path: the likelihood composed with a prior path.
#[derive(Debug)]
pub struct Posterior {
    inner: Box<dyn AnnealingPath>,
    likelihood: LinearGaussianLikelihood,
}

impl Posterior {
    pub fn new(inner: Box<dyn AnnealingPath>, likelihood: LinearGaussianLikelihood) -> Result<Self> {
        check_dim(inner.dim(), likelihood.dim())?;
        Ok(Self { inner, likelihood })
    }

    pub fn inner(&self) -> &dyn AnnealingPath {
        self.inner.as_ref()
    }

    pub fn likelihood(&self) -> &LinearGaussianLikelihood {
        &self.likelihood
    }
}

impl AnnealingPath for Posterior {
    fn variant(&self) -> PathVariant {
        PathVariant::Posterior
    }

    /// The prior mixture of the inner path.
    fn target(&self) -> &GaussianMixture {
        self.inner.target()
    }

    fn tau_max(&self) -> f64 {
        self.inner.tau_max()
    }

    fn potential(&self, x: &[f64], tau: f64) -> Result<f64> {
        Ok(self.likelihood.neg_log_likelihood(x)? + self.inner.potential(x, tau)?)
    }

    fn grad_potential_into(&self, x: &[f64], tau: f64, out: &mut [f64]) -> Result<()> {
        self.inner.grad_potential_into(x, tau, out)?;
        let mut lik = vec![0.0; x.len()];
        self.likelihood.grad_into(x, &mut lik)?;
        for (o, l) in out.iter_mut().zip(&lik) {
            *o += l;
        }
        Ok(())
    }

    fn step_constants(&self, tau: f64) -> Result<StepConstants> {
        let inner = self.inner.step_constants(tau)?;
        Ok(StepConstants {
            a: inner.a,
            lipschitz: inner.lipschitz + self.likelihood.lipschitz(),
        })
    }
}
