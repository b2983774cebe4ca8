use thiserror::Error;

/// Errors raised by targets, paths, the sampler and the metrics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tau = {tau} outside the {path} path domain [0, {tau_max}]")]
    TauOutOfDomain {
        path: &'static str,
        tau: f64,
        tau_max: f64,
    },

    #[error("prox did not converge after {iterations} iterations (gradient norm {grad_norm:e}, tolerance {tolerance:e})")]
    ProxNotConverged {
        iterations: usize,
        grad_norm: f64,
        tolerance: f64,
    },

    #[error("non-finite state in chain {chain} at step {step}")]
    NonFiniteState { chain: usize, step: u64 },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping any `Context` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
