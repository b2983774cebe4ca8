//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{AxisBins, HistogramSpec};
use crate::paths::{
    AnnealingPath, Convolution, Dilation, GeometricTempering, Identity, MoreauPath, ProxSettings,
};
use crate::sampler::Init;
use crate::schedules::{Schedule, StepPolicy};
use crate::targets::GaussianMixture;

/// Methods in the column order of the output files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DirectSample,
    Ula,
    Dilation,
    Tempering,
    Convolution,
    Daz,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::DirectSample,
        Method::Ula,
        Method::Dilation,
        Method::Tempering,
        Method::Convolution,
        Method::Daz,
    ];

    pub fn config_name(self) -> &'static str {
        match self {
            Method::DirectSample => "direct_sample",
            Method::Ula => "ula",
            Method::Dilation => "dilation",
            Method::Tempering => "tempering",
            Method::Convolution => "convolution",
            Method::Daz => "daz",
        }
    }

    /// Column name in `KL_comparison.csv`.
    pub fn kl_column(self) -> &'static str {
        match self {
            Method::DirectSample => "KL_gt",
            Method::Ula => "ULA",
            Method::Dilation => "dilation",
            Method::Tempering => "tempering",
            Method::Convolution => "diffusion",
            Method::Daz => "DAZ",
        }
    }

    /// Column name in histogram files and the suffix of marginal KL columns.
    pub fn histogram_column(self) -> &'static str {
        match self {
            Method::DirectSample => "gt",
            Method::Daz => "daz",
            other => other.kl_column(),
        }
    }

    pub fn is_sampler(self) -> bool {
        self != Method::DirectSample
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Weights (0.3, 0.4, 0.3), means (−2, 0, 2), standard deviations (0.2, 0.1, 0.3).
    #[serde(rename = "reference_1d")]
    Reference1d,
    /// Four modes on the corners of `[0, 2]²`.
    #[serde(rename = "reference_2d")]
    Reference2d,
    /// Means `~ N(0, I)` and per-axis standard deviations `~ U[lo, hi]`,
    /// drawn from `seed`.
    Random {
        dim: usize,
        weights: Vec<f64>,
        seed: u64,
        #[serde(default = "default_std_range")]
        std_range: [f64; 2],
    },
    /// Diagonal covariances given as variances.
    Diagonal {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variances: Vec<Vec<f64>>,
    },
    /// Full covariances, each given as a list of rows.
    Full {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariances: Vec<Vec<Vec<f64>>>,
    },
}

fn default_std_range() -> [f64; 2] {
    [0.1, 0.4]
}

impl TargetSpec {
    pub fn build(&self) -> Result<GaussianMixture> {
        match self {
            TargetSpec::Reference1d => Ok(GaussianMixture::reference_1d()),
            TargetSpec::Reference2d => Ok(GaussianMixture::reference_2d()),
            TargetSpec::Random { dim, weights, seed, std_range } => random_mixture(*dim, weights, *seed, *std_range),
            TargetSpec::Diagonal { weights, means, variances } => {
                GaussianMixture::diagonal(weights.clone(), means.clone(), variances.clone())
            }
            TargetSpec::Full { weights, means, covariances } => {
                let d = means.first().map_or(0, Vec::len);
                let means = means.iter().map(|m| DVector::from_vec(m.clone())).collect();
                let covs = covariances
                    .iter()
                    .map(|rows| {
                        if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                            return Err(Error::InvalidMixture(format!("covariance must be {d}x{d}")));
                        }
                        Ok(DMatrix::from_row_iterator(d, d, rows.iter().flatten().copied()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                GaussianMixture::new(weights.clone(), means, covs)
            }
        }
    }
}

/// Mixture with means drawn from `N(0, I)` and standard deviations from
/// `U[lo, hi]`, using a ChaCha8 stream seeded with `seed`: all means first
/// (component-major), then all standard deviations.
pub fn random_mixture(dim: usize, weights: &[f64], seed: u64, std_range: [f64; 2]) -> Result<GaussianMixture> {
    let [lo, hi] = std_range;
    if !(0.0 < lo && lo <= hi) {
        return Err(Error::InvalidMixture(format!("std range must satisfy 0 < lo <= hi, got [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = weights.len();
    let means: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let variances = (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let s = lo + (hi - lo) * rng.random::<f64>();
                    s * s
                })
                .collect()
        })
        .collect();
    GaussianMixture::diagonal(weights.to_vec(), means, variances)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub methods: Vec<Method>,
    #[serde(rename = "T")]
    pub half_scales: Vec<f64>,
    pub n_chains: usize,
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub max_sim_time: Option<f64>,
    /// Record KL every this many iterations (including 0).
    #[serde(default)]
    pub kl_every: Option<u64>,
    /// Extra iterations at which KL is recorded.
    #[serde(default)]
    pub kl_iterations: Vec<u64>,
    /// Iterations with histogram output (d ≤ 2).
    #[serde(default)]
    pub histogram_iterations: Vec<u64>,
    /// Defaults to the point one below the smallest mean coordinate.
    #[serde(default)]
    pub init: Option<Init>,
    /// Marginal KL files for axes `0..marginals` when d > 2.
    #[serde(default = "default_marginals")]
    pub marginals: usize,
}

fn default_marginals() -> usize {
    4
}

impl RunSection {
    pub fn records_kl(&self, k: u64) -> bool {
        self.kl_every.is_some_and(|e| k.is_multiple_of(e)) || self.kl_iterations.contains(&k)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSection {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSection {
    #[serde(default)]
    pub dilation_tau_max: Option<f64>,
    #[serde(default)]
    pub daz_tau_max: Option<f64>,
    #[serde(default)]
    pub tempering_reference_std: Option<f64>,
    #[serde(default)]
    pub prox: Option<ProxSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub target: TargetSpec,
    pub run: RunSection,
    #[serde(default)]
    pub policy: StepPolicy,
    #[serde(default)]
    pub histogram: HistogramSection,
    #[serde(default)]
    pub paths: PathSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| e.context(path.display().to_string()))
    }

    /// Checks everything that can be checked before simulating, including
    /// that every configured path accepts its starting `τ`.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let run = &self.run;
        if run.methods.is_empty() {
            return bad("run.methods must not be empty".into());
        }
        if run.half_scales.is_empty() || run.half_scales.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return bad(format!("run.T must be a nonempty list of positive values, got {:?}", run.half_scales));
        }
        if run.n_chains == 0 {
            return bad("run.n_chains must be at least 1".into());
        }
        if run.max_steps.is_none() && run.max_sim_time.is_none() {
            return bad("one of run.max_steps or run.max_sim_time is required".into());
        }
        if run.max_steps.is_none() && run.kl_every.is_none() {
            return bad("run.kl_every is required when only run.max_sim_time bounds the run".into());
        }
        if run.kl_every == Some(0) {
            return bad("run.kl_every must be positive".into());
        }
        self.policy.validate()?;
        let target = self.target.build()?;
        if let Some(init) = &run.init {
            if init.dim() != target.dim() {
                return bad(format!("run.init has dimension {} but the target has {}", init.dim(), target.dim()));
            }
        }
        if target.dim() > 2 && !run.histogram_iterations.is_empty() {
            return bad("run.histogram_iterations needs d <= 2".into());
        }
        self.histogram_spec(&target)?;
        let target = Arc::new(target);
        for &m in run.methods.iter().filter(|m| m.is_sampler()) {
            let path = self.build_path(m, target.clone())?;
            // the exponential schedule starts at τ = 1, clamped to the path's domain
            let tau0 = Schedule::exponential(run.half_scales[0])?.tau_clamped(0.0, path.tau_max())?;
            path.step_constants(tau0).map_err(|e| e.context(format!("method {}", m.config_name())))?;
        }
        Ok(())
    }

    pub fn target(&self) -> Result<GaussianMixture> {
        self.target.build()
    }

    pub fn init(&self, target: &GaussianMixture) -> Init {
        self.run.init.clone().unwrap_or_else(|| default_init(target))
    }

    /// Full-space spec for d ≤ 2, per-axis marginal spec otherwise.
    pub fn histogram_spec(&self, target: &GaussianMixture) -> Result<HistogramSpec> {
        let h = &self.histogram;
        let d = target.dim();
        let axes = (0..d)
            .map(|i| {
                let default = HistogramSpec::default_marginal(target, i)?.axes()[0];
                Ok(AxisBins {
                    lo: h.lo.unwrap_or(default.lo),
                    hi: h.hi.unwrap_or(default.hi),
                    bins: h.bins.unwrap_or(if d == 2 { 100 } else { 200 }),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if d <= 2 {
            HistogramSpec::new(axes)
        } else {
            // validated axis by axis; the product would exceed the cell limit
            for a in &axes {
                HistogramSpec::new(vec![*a])?;
            }
            Ok(HistogramSpec::new(vec![axes[0]])?)
        }
    }

    /// Marginal spec for `axis` (d > 2).
    pub fn marginal_spec(&self, target: &GaussianMixture, axis: usize) -> Result<HistogramSpec> {
        let default = HistogramSpec::default_marginal(target, axis)?.axes()[0];
        let h = &self.histogram;
        HistogramSpec::new(vec![AxisBins {
            lo: h.lo.unwrap_or(default.lo),
            hi: h.hi.unwrap_or(default.hi),
            bins: h.bins.unwrap_or(200),
        }])
    }

    pub fn build_path(&self, method: Method, target: Arc<GaussianMixture>) -> Result<Box<dyn AnnealingPath>> {
        let p = &self.paths;
        Ok(match method {
            Method::Ula => Box::new(Identity::new(target)),
            Method::Dilation => Box::new(Dilation::new(target, p.dilation_tau_max.unwrap_or(Dilation::DEFAULT_TAU_MAX))?),
            Method::Tempering => match p.tempering_reference_std {
                Some(std) => {
                    let reference = Arc::new(GaussianMixture::isotropic(target.dim(), std)?);
                    Box::new(GeometricTempering::new(target, reference)?)
                }
                None => Box::new(GeometricTempering::with_default_reference(target)?),
            },
            Method::Convolution => Box::new(Convolution::new(target)),
            Method::Daz => {
                let settings = p.prox.unwrap_or_default();
                match p.daz_tau_max {
                    Some(tau_max) => Box::new(MoreauPath::new(target, tau_max, settings)?),
                    None => {
                        let tau_max = 0.5 * MoreauPath::tau_bound(&target.estimate_constants());
                        Box::new(MoreauPath::new(target, tau_max, settings)?)
                    }
                }
            }
            Method::DirectSample => {
                return Err(Error::InvalidArgument("direct_sample has no annealing path".into()));
            }
        })
    }

    /// ULA runs at `τ ≡ 0`; every other method anneals with `exp(−t/T)`.
    pub fn schedule(&self, method: Method, half_scale: f64) -> Result<Schedule> {
        match method {
            Method::Ula => Ok(Schedule::Frozen { tau: 0.0 }),
            _ => Schedule::exponential(half_scale),
        }
    }
}

/// Plain-text table of `τ`, `a_τ`, `L_τ` and the theory-max step for each
/// configured method, over a grid of `τ` values inside its domain.
pub fn constants_table(config: &ExperimentConfig) -> Result<String> {
    use std::fmt::Write;
    let target = Arc::new(config.target()?);
    let c = target.estimate_constants();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "target: d={} components={} L={} a={} b={} R={} alpha={}",
        target.dim(),
        target.n_components(),
        c.lipschitz,
        c.dissipativity_a,
        c.dissipativity_b,
        c.dissipativity_radius,
        c.weak_convexity
    );
    for &m in Method::ALL.iter().filter(|m| m.is_sampler() && config.run.methods.contains(m)) {
        let path = config.build_path(m, target.clone())?;
        let _ = writeln!(out, "\n{} (tau_max = {})", m.config_name(), path.tau_max());
        let _ = writeln!(out, "{:>12} {:>14} {:>14} {:>14}", "tau", "a_tau", "L_tau", "h");
        let mut taus: Vec<f64> = [1.0, 0.5, 0.1, 0.01, 1e-3, 1e-4, 0.0].iter().map(|f| f * path.tau_max()).collect();
        if m == Method::Ula {
            taus = vec![0.0];
        }
        for tau in taus {
            let k = path.step_constants(tau)?;
            let h = crate::schedules::next_step(&config.policy, path.as_ref(), &Schedule::Frozen { tau }, 0, 0.0)?.h;
            let _ = writeln!(out, "{tau:>12.4e} {:>14.6e} {:>14.6e} {h:>14.6e}", k.a, k.lipschitz);
        }
    }
    Ok(out)
}

/// Point at the coordinate-wise minimum mean minus one.
pub fn default_init(target: &GaussianMixture) -> Init {
    let point = (0..target.dim())
        .map(|j| (0..target.n_components()).map(|i| target.mean(i)[j]).fold(f64::INFINITY, f64::min) - 1.0)
        .collect();
    Init::Point { point }
}

/// Directory label for `T`: its shortest decimal form without the point,
/// so 0.1 → `01`, 2 → `2`, 10 → `10`.
pub fn t_label(half_scale: f64) -> String {
    format!("{half_scale}").replace('.', "")
}
