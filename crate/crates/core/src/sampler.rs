//! Ensemble Euler–Maruyama simulation of the annealed Langevin diffusion
//!
//! ```text
//! X_{k+1} = X_k − h_k ∇U_{τ(t_k)}(X_k) + √(2h_k) Z_k,    t_k = Σ_{i<k} h_i
//! ```
//!
//! Chains are updated as a parallel map with no cross-chain communication.
//! Noise comes from per-chain counter streams (see [`crate::rng`]), so results
//! are bit-identical for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::paths::AnnealingPath;
use crate::rng::ChainStream;
use crate::samples::Samples;
use crate::schedules::{next_step, CompensatedSum, Schedule, StepPolicy};

/// Initial chain positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    Point { point: Vec<f64> },
    Gaussian { mean: Vec<f64>, scale: f64 },
}

impl Init {
    pub fn dim(&self) -> usize {
        match self {
            Init::Point { point } => point.len(),
            Init::Gaussian { mean, .. } => mean.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    states: Vec<f64>,
    next: Vec<f64>,
    dim: usize,
    chain_ids: Vec<u64>,
    streams: Vec<ChainStream>,
    seed: u64,
    step: u64,
    time: CompensatedSum,
}

impl Ensemble {
    /// `n_chains` chains with ids `0..n_chains`.
    pub fn new(init: &Init, n_chains: usize, seed: u64) -> Result<Self> {
        let dim = init.dim();
        if n_chains == 0 || dim == 0 {
            return Err(Error::InvalidArgument("ensemble needs at least one chain and dimension".into()));
        }
        let mut states = Vec::with_capacity(n_chains * dim);
        match init {
            Init::Point { point } => {
                for _ in 0..n_chains {
                    states.extend_from_slice(point);
                }
            }
            Init::Gaussian { mean, scale } => {
                if !(*scale >= 0.0) {
                    return Err(Error::InvalidArgument(format!("init scale must be non-negative, got {scale}")));
                }
                let mut z = vec![0.0; dim];
                for id in 0..n_chains as u64 {
                    ChainStream::for_init(seed, id, dim).normals_at(0, &mut z);
                    states.extend(mean.iter().zip(&z).map(|(m, zj)| m + scale * zj));
                }
            }
        }
        Self::from_states(Samples::new(states, dim)?, seed)
    }

    /// Ensemble at explicit positions, chain ids `0..len`.
    pub fn from_states(states: Samples, seed: u64) -> Result<Self> {
        let ids = (0..states.len() as u64).collect();
        Self::with_chain_ids(states, ids, seed)
    }

    pub fn with_chain_ids(states: Samples, chain_ids: Vec<u64>, seed: u64) -> Result<Self> {
        if chain_ids.len() != states.len() || states.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} chain ids for {} states",
                chain_ids.len(),
                states.len()
            )));
        }
        if states.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("initial states must be finite".into()));
        }
        let dim = states.dim();
        let streams = chain_ids.iter().map(|&id| ChainStream::new(seed, id, dim)).collect();
        let states = states.into_vec();
        Ok(Self {
            next: vec![0.0; states.len()],
            states,
            dim,
            chain_ids,
            streams,
            seed,
            step: 0,
            time: CompensatedSum::default(),
        })
    }

    /// Keeps only the chains whose id satisfies `keep`; their streams are untouched.
    pub fn retain_chains(&mut self, mut keep: impl FnMut(u64) -> bool) {
        let d = self.dim;
        let mut states = Vec::new();
        let mut ids = Vec::new();
        let mut streams = Vec::new();
        for ((row, &id), stream) in self.states.chunks_exact(d).zip(&self.chain_ids).zip(self.streams.drain(..)) {
            if keep(id) {
                states.extend_from_slice(row);
                ids.push(id);
                streams.push(stream);
            }
        }
        self.next = vec![0.0; states.len()];
        self.states = states;
        self.chain_ids = ids;
        self.streams = streams;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_chains(&self) -> usize {
        self.chain_ids.len()
    }

    pub fn chain_ids(&self) -> &[u64] {
        &self.chain_ids
    }

    pub fn chain(&self, index: usize) -> &[f64] {
        &self.states[index * self.dim..(index + 1) * self.dim]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of accepted steps `k`.
    pub fn step_index(&self) -> u64 {
        self.step
    }

    /// `t_k = Σ_{i<k} h_i`, compensated.
    pub fn sim_time(&self) -> f64 {
        self.time.value()
    }

    /// Current positions, chain-major.
    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// Deep copy of the current positions.
    pub fn snapshot(&self) -> Samples {
        Samples::new(self.states.clone(), self.dim).expect("consistent ensemble shape")
    }

    /// One Euler–Maruyama step of every chain with step `h` at path parameter `tau`.
    ///
    /// On error the ensemble is left unchanged.
    pub fn em_step(&mut self, path: &dyn AnnealingPath, h: f64, tau: f64) -> Result<()> {
        if !(h >= 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be finite and non-negative, got {h}")));
        }
        path.check_tau(tau)?;
        if path.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: path.dim(), got: self.dim });
        }
        let d = self.dim;
        let step = self.step;
        let noise_scale = (2.0 * h).sqrt();
        let failure = self
            .states
            .par_chunks_exact(d)
            .zip(self.next.par_chunks_exact_mut(d))
            .zip(self.streams.par_iter_mut())
            .enumerate()
            .filter_map(|(chain, ((x, out), stream))| {
                let mut grad: SmallVec<[f64; 16]> = SmallVec::from_elem(0.0, d);
                let mut z: SmallVec<[f64; 16]> = SmallVec::from_elem(0.0, d);
                if let Err(e) = path.grad_potential_into(x, tau, &mut grad) {
                    return Some((chain, e.context(format!("chain {chain} at step {step}"))));
                }
                stream.normals_at(step, &mut z);
                em_update(x, &grad, &z, h, noise_scale, out);
                if out.iter().all(|v| v.is_finite()) {
                    None
                } else {
                    Some((chain, Error::NonFiniteState { chain, step }))
                }
            })
            .min_by_key(|(chain, _)| *chain);
        if let Some((_, e)) = failure {
            return Err(e);
        }
        std::mem::swap(&mut self.states, &mut self.next);
        self.step += 1;
        self.time.add(h);
        Ok(())
    }
}

/// `x − h·grad + noise_scale·z`, with `noise_scale = √(2h)`.
#[inline]
pub fn em_update(x: &[f64], grad: &[f64], z: &[f64], h: f64, noise_scale: f64, out: &mut [f64]) {
    for (((o, xj), gj), zj) in out.iter_mut().zip(x).zip(grad).zip(z) {
        *o = xj - h * gj + noise_scale * zj;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub n_chains: usize,
    /// Stop after this many steps.
    pub n_steps: Option<u64>,
    /// Stop once the simulated time reaches this.
    pub max_sim_time: Option<f64>,
    /// Iterations at which to record the ensemble (state after `k` steps).
    pub snapshot_iterations: Vec<u64>,
    pub init: Init,
}

impl RunPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::InvalidArgument("n_chains must be at least 1".into()));
        }
        if self.n_steps.is_none() && self.max_sim_time.is_none() {
            return Err(Error::InvalidArgument("either n_steps or max_sim_time is required".into()));
        }
        if let Some(t) = self.max_sim_time {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::InvalidArgument(format!("max_sim_time must be finite and non-negative, got {t}")));
            }
        }
        if self.snapshot_iterations.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("snapshot iterations must be strictly increasing".into()));
        }
        if let (Some(k), Some(&last)) = (self.n_steps, self.snapshot_iterations.last()) {
            if last > k {
                return Err(Error::InvalidArgument(format!("snapshot iteration {last} exceeds n_steps {k}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: u64,
    /// `τ(t_k)` at the snapshot.
    pub tau: f64,
    pub time: f64,
    pub samples: Samples,
}

/// One executed step: `h_k`, `τ_k = τ(t_k)` and `t_k` (time before the step).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: u64,
    pub h: f64,
    pub tau: f64,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Steps,
    SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub snapshots: Vec<Snapshot>,
    pub trace: Vec<StepRecord>,
    pub final_iteration: u64,
    pub final_time: f64,
    pub terminated_by: Termination,
}

impl RunOutput {
    pub fn snapshot_at(&self, iteration: u64) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.iteration == iteration)
    }
}

/// Runs the annealed sampler from a fresh ensemble.
pub fn run(
    path: &dyn AnnealingPath,
    schedule: &Schedule,
    policy: &StepPolicy,
    plan: &RunPlan,
    seed: u64,
) -> Result<RunOutput> {
    plan.validate()?;
    let ensemble = Ensemble::new(&plan.init, plan.n_chains, seed)?;
    run_ensemble(path, schedule, policy, plan, ensemble)
}

/// Runs the annealed sampler from a given ensemble (its step counter and
/// time continue from their current values).
pub fn run_ensemble(
    path: &dyn AnnealingPath,
    schedule: &Schedule,
    policy: &StepPolicy,
    plan: &RunPlan,
    mut ensemble: Ensemble,
) -> Result<RunOutput> {
    plan.validate()?;
    let mut snapshots = Vec::new();
    let mut wanted = plan.snapshot_iterations.iter().peekable();
    let summary = drive(path, schedule, policy, plan.n_steps, plan.max_sim_time, &mut ensemble, |e, tau| {
        let k = e.step_index();
        while wanted.peek().is_some_and(|&&s| s < k) {
            wanted.next();
        }
        if wanted.peek().is_some_and(|&&s| s == k) {
            snapshots.push(Snapshot { iteration: k, tau, time: e.sim_time(), samples: e.snapshot() });
            wanted.next();
        }
        Ok(())
    })?;
    Ok(RunOutput {
        snapshots,
        trace: summary.trace,
        final_iteration: summary.final_iteration,
        final_time: summary.final_time,
        terminated_by: summary.terminated_by,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveSummary {
    pub trace: Vec<StepRecord>,
    pub final_iteration: u64,
    pub final_time: f64,
    pub terminated_by: Termination,
}

/// Advances `ensemble` until `n_steps` total steps or simulated time
/// `max_sim_time`, whichever comes first.
///
/// `observe(ensemble, τ(t_k))` is called before every step and once more at
/// the end, so it sees iterations `k₀, k₀+1, …, K` exactly once each.
pub fn drive(
    path: &dyn AnnealingPath,
    schedule: &Schedule,
    policy: &StepPolicy,
    n_steps: Option<u64>,
    max_sim_time: Option<f64>,
    ensemble: &mut Ensemble,
    mut observe: impl FnMut(&Ensemble, f64) -> Result<()>,
) -> Result<DriveSummary> {
    schedule.validate()?;
    policy.validate()?;
    if n_steps.is_none() && max_sim_time.is_none() {
        return Err(Error::InvalidArgument("either n_steps or max_sim_time is required".into()));
    }
    let mut trace = Vec::new();
    let terminated_by = loop {
        let k = ensemble.step_index();
        let t = ensemble.sim_time();
        let tau = schedule.tau_clamped(t, path.tau_max())?;
        observe(ensemble, tau)?;
        if n_steps.is_some_and(|n| k >= n) {
            break Termination::Steps;
        }
        if max_sim_time.is_some_and(|tmax| t >= tmax) {
            break Termination::SimTime;
        }
        let step = next_step(policy, path, schedule, k, t).map_err(|e| e.context(format!("step size at iteration {k}")))?;
        ensemble
            .em_step(path, step.h, step.tau)
            .map_err(|e| e.context(format!("{} run, iteration {k}", path.variant())))?;
        trace.push(StepRecord { k, h: step.h, tau: step.tau, t });
    };
    Ok(DriveSummary {
        trace,
        final_iteration: ensemble.step_index(),
        final_time: ensemble.sim_time(),
        terminated_by,
    })
}
