//! Annealing schedules `τ(t)` and step-size policies `h_k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::AnnealingPath;

/// Shave applied to the theoretical cap so `h_k < a_τ/L_τ²` holds strictly.
pub const STRICT_SHAVE: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// `τ(t) = exp(−t/T)`.
    ExponentialAnneal {
        #[serde(rename = "T")]
        half_scale: f64,
    },
    /// Constant `τ`; `τ = 0` turns any path into plain Langevin on the target.
    Frozen { tau: f64 },
}

impl Schedule {
    pub fn exponential(half_scale: f64) -> Result<Self> {
        let s = Schedule::ExponentialAnneal { half_scale };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::ExponentialAnneal { half_scale } if !(half_scale > 0.0 && half_scale.is_finite()) => {
                Err(Error::InvalidArgument(format!("schedule T must be positive, got {half_scale}")))
            }
            Schedule::Frozen { tau } if !(tau >= 0.0 && tau.is_finite()) => {
                Err(Error::InvalidArgument(format!("frozen tau must be non-negative, got {tau}")))
            }
            _ => Ok(()),
        }
    }

    /// `τ(t)` before any path-specific clamping.
    pub fn tau_at(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("time must be non-negative, got {t}")));
        }
        Ok(match *self {
            Schedule::ExponentialAnneal { half_scale } => (-t / half_scale).exp(),
            Schedule::Frozen { tau } => tau,
        })
    }

    /// `τ(t)` clamped from above to `tau_max`. The exponential schedule starts
    /// at 1, above the domain of paths such as dilation.
    pub fn tau_clamped(&self, t: f64, tau_max: f64) -> Result<f64> {
        let tau = self.tau_at(t)?;
        Ok(match self {
            Schedule::ExponentialAnneal { .. } => tau.min(tau_max),
            Schedule::Frozen { .. } => tau,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepPolicy {
    /// The largest admissible step `a_τ/L_τ²`, capped at `h_max`.
    TheoryMax { h_max: f64 },
    /// `h_k = h₀/(k+1)^p` with `p ∈ (½, 1]`, never above the theoretical cap.
    SquareSummable { h0: f64, p: f64 },
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy::TheoryMax { h_max: 0.5 }
    }
}

impl StepPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepPolicy::TheoryMax { h_max } if !(h_max > 0.0) => {
                Err(Error::InvalidArgument(format!("h_max must be positive, got {h_max}")))
            }
            StepPolicy::SquareSummable { h0, p } if !(h0 > 0.0 && p > 0.5 && p <= 1.0) => Err(
                Error::InvalidArgument(format!("square-summable policy needs h0 > 0 and p in (0.5, 1], got h0={h0}, p={p}")),
            ),
            _ => Ok(()),
        }
    }
}

/// One entry of the discrete time grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub h: f64,
    pub tau: f64,
    /// `a_τ/L_τ²` at this step.
    pub cap: f64,
}

/// Step size and `τ_k = τ(t_k)` for iteration `k`.
pub fn next_step(
    policy: &StepPolicy,
    path: &dyn AnnealingPath,
    schedule: &Schedule,
    k: u64,
    t_k: f64,
) -> Result<Step> {
    let tau = schedule.tau_clamped(t_k, path.tau_max())?;
    let cap = path.step_constants(tau)?.step_cap();
    let h = match *policy {
        StepPolicy::TheoryMax { h_max } => cap.min(h_max) * STRICT_SHAVE,
        StepPolicy::SquareSummable { h0, p } => (h0 / ((k + 1) as f64).powf(p)).min(cap * STRICT_SHAVE),
    };
    Ok(Step { h, tau, cap })
}

/// Neumaier-compensated running sum, used for `t_k = Σ_{i<k} h_i`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.compensation += (self.sum - t) + v;
        } else {
            self.compensation += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{Dilation, Identity};
    use crate::targets::GaussianMixture;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    #[test]
    fn exponential_schedule_values() {
        let s = Schedule::exponential(1.0).unwrap();
        assert_eq!(s.tau_at(0.0).unwrap(), 1.0);
        let s = Schedule::exponential(2.0).unwrap();
        assert_relative_eq!(s.tau_at(2.0).unwrap(), 0.367_879_441_171_442_3, epsilon = 1e-15);
        assert!(s.tau_at(60.0).unwrap() <= 1e-12);
        assert!(s.tau_at(-1.0).is_err());
        assert!(Schedule::exponential(0.0).is_err());
        assert_eq!(s.tau_clamped(0.0, 0.99).unwrap(), 0.99);
        assert_eq!(Schedule::Frozen { tau: 0.3 }.tau_at(7.0).unwrap(), 0.3);
    }

    #[test]
    fn theory_max_on_standard_normal_is_capped() {
        let path = Identity::new(Arc::new(GaussianMixture::standard_normal(2).unwrap()));
        let s = Schedule::Frozen { tau: 0.0 };
        let step = next_step(&StepPolicy::TheoryMax { h_max: 0.5 }, &path, &s, 0, 0.0).unwrap();
        assert_eq!(step.h, 0.5 * STRICT_SHAVE);
        let step = next_step(&StepPolicy::TheoryMax { h_max: 10.0 }, &path, &s, 0, 0.0).unwrap();
        assert!(step.h < 1.0 && step.h > 1.0 - 1e-8);
    }

    #[test]
    fn theory_max_on_reference_mixture() {
        let path = Identity::new(Arc::new(GaussianMixture::reference_1d()));
        let step = next_step(&StepPolicy::default(), &path, &Schedule::Frozen { tau: 0.0 }, 3, 1.0).unwrap();
        assert_relative_eq!(step.h, (1.0 / 0.09) / 1e4, max_relative = 1e-8);
        assert!(step.h < step.cap);
    }

    #[test]
    fn square_summable_harmonic() {
        let path = Identity::new(Arc::new(GaussianMixture::standard_normal(1).unwrap()));
        let policy = StepPolicy::SquareSummable { h0: 0.1, p: 1.0 };
        let step = next_step(&policy, &path, &Schedule::Frozen { tau: 0.0 }, 9, 0.0).unwrap();
        assert_relative_eq!(step.h, 0.01, epsilon = 1e-15);
        assert!(StepPolicy::SquareSummable { h0: 0.1, p: 0.5 }.validate().is_err());
        assert!(StepPolicy::SquareSummable { h0: 0.1, p: 1.2 }.validate().is_err());
    }

    #[test]
    fn dilation_tau_is_clamped() {
        let path = Dilation::new(Arc::new(GaussianMixture::reference_1d()), 0.9).unwrap();
        let step = next_step(&StepPolicy::default(), &path, &Schedule::exponential(1.0).unwrap(), 0, 0.0).unwrap();
        assert_eq!(step.tau, 0.9);
        assert_relative_eq!(step.cap, (1.0 / 0.09) / (1000.0 * 1000.0), max_relative = 1e-9);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let mut c = CompensatedSum::default();
        let mut naive = 0.0;
        for _ in 0..10_000_000 {
            c.add(0.1);
            naive += 0.1;
        }
        assert!((c.value() - 1e6).abs() < 1e-9);
        assert!((naive - 1e6f64).abs() > (c.value() - 1e6).abs());
    }
}
