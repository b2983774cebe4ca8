//! Annealed Langevin Monte Carlo for multimodal targets.
//!
//! A target `π ∝ exp(−U)` is reached through a family of potentials `U_τ`
//! with `U_0 = U`; the sampler discretizes `dX = −∇U_{τ(t)}(X) dt + √2 dW`
//! with `τ(t) → 0`. Targets are Gaussian mixtures, whose scores, Moreau
//! envelopes and Gaussian convolutions are all available in closed form or by
//! cheap inner solves.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod metrics;
#[cfg(feature = "oracles")]
pub mod oracles;
pub mod paths;
pub mod rng;
pub mod sampler;
pub mod samples;
pub mod schedules;
pub mod targets;

pub use error::{Error, Result};
pub use paths::{AnnealingPath, PathVariant, StepConstants};
pub use sampler::{run, Ensemble, Init, RunOutput, RunPlan};
pub use samples::Samples;
pub use schedules::{Schedule, StepPolicy};
pub use targets::{GaussianMixture, TargetConstants};
