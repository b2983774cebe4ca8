//! Method × T sweeps writing KL curves, histograms, traces and metadata.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{t_label, ExperimentConfig, Method};
use super::HarnessError;
use crate::error::{Error, Result};
use crate::metrics::{BinnedTarget, HistogramSpec};
use crate::sampler::{drive, Ensemble, StepRecord, Termination};
use crate::samples::Samples;
use crate::targets::GaussianMixture;

/// Stream id of the direct-sample baseline draw (chain streams stay below it).
const DIRECT_SAMPLE_STREAM: u64 = 1 << 62;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Run method × T cells concurrently.
    pub parallel: bool,
    /// Overrides the configured output directory.
    pub out_dir: Option<PathBuf>,
}

/// KL estimators for one experiment: full-space for d ≤ 2, per-axis
/// marginals otherwise.
#[derive(Debug)]
enum Evaluator {
    Full(BinnedTarget),
    Marginals(Vec<BinnedTarget>),
}

impl Evaluator {
    fn new(config: &ExperimentConfig, target: &GaussianMixture) -> Result<Self> {
        if target.dim() <= 2 {
            return Ok(Evaluator::Full(BinnedTarget::new(target, &config.histogram_spec(target)?)?));
        }
        let axes = config.run.marginals.min(target.dim());
        (0..axes)
            .map(|i| BinnedTarget::new(&target.marginal(i)?, &config.marginal_spec(target, i)?))
            .collect::<Result<_>>()
            .map(Evaluator::Marginals)
    }

    fn kl(&self, samples: &Samples) -> Result<Vec<f64>> {
        match self {
            Evaluator::Full(b) => Ok(vec![b.kl(samples)?.kl]),
            Evaluator::Marginals(bs) => bs
                .iter()
                .enumerate()
                .map(|(i, b)| Ok(b.kl(&samples.project(i)?)?.kl))
                .collect(),
        }
    }

    fn full(&self) -> Option<&BinnedTarget> {
        match self {
            Evaluator::Full(b) => Some(b),
            Evaluator::Marginals(_) => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub method: Method,
    #[serde(rename = "T")]
    pub half_scale: f64,
    pub tau_max: f64,
    pub final_iteration: u64,
    pub final_time: f64,
    pub terminated_by: Termination,
    pub wall_seconds: f64,
    /// Steps at KL-record iterations; the full trace is not stored.
    pub trace: Vec<StepRecord>,
}

#[derive(Debug, Clone)]
struct CellResult {
    summary: CellSummary,
    kl: BTreeMap<u64, Vec<f64>>,
    histograms: BTreeMap<u64, Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub direct_sample_kl: Option<Vec<f64>>,
    pub cells: Vec<CellSummary>,
}

/// Runs every configured cell and writes the artifact set.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> std::result::Result<ExperimentSummary, HarnessError> {
    config.validate().map_err(HarnessError::Config)?;
    let out_dir = options.out_dir.clone().unwrap_or_else(|| config.output_dir.clone());
    fs::create_dir_all(&out_dir).map_err(|e| HarnessError::io(&out_dir, e, true))?;
    let probe = out_dir.join(".write_probe");
    fs::write(&probe, b"").and_then(|_| fs::remove_file(&probe)).map_err(|e| HarnessError::io(&out_dir, e, true))?;

    let started = Instant::now();
    let target = Arc::new(config.target().map_err(HarnessError::Config)?);
    let evaluator = Evaluator::new(config, &target).map_err(HarnessError::Config)?;
    let methods: Vec<Method> = Method::ALL.into_iter().filter(|m| config.run.methods.contains(m)).collect();

    let direct_sample_kl = if methods.contains(&Method::DirectSample) {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(DIRECT_SAMPLE_STREAM);
        let exact = target.sample(config.run.n_chains, &mut rng).map_err(HarnessError::Runtime)?;
        Some(evaluator.kl(&exact).map_err(HarnessError::Runtime)?)
    } else {
        None
    };

    // ULA ignores the schedule, so one run serves every T.
    let mut cells: Vec<(Method, f64)> = Vec::new();
    for &m in methods.iter().filter(|m| m.is_sampler()) {
        if m == Method::Ula {
            cells.push((m, config.run.half_scales[0]));
        } else {
            cells.extend(config.run.half_scales.iter().map(|&t| (m, t)));
        }
    }
    let run_one = |&(m, t): &(Method, f64)| run_cell(config, &target, &evaluator, m, t);
    let results: Vec<CellResult> = if options.parallel {
        cells.par_iter().map(run_one).collect::<Result<_>>()
    } else {
        cells.iter().map(run_one).collect::<Result<_>>()
    }
    .map_err(HarnessError::Runtime)?;

    let lookup = |m: Method, t: f64| {
        results
            .iter()
            .find(|r| r.summary.method == m && (m == Method::Ula || r.summary.half_scale == t))
    };

    let mut files = Vec::new();
    for &t in &config.run.half_scales {
        let label = t_label(t);
        let row_cells: Vec<(Method, Option<&CellResult>)> = methods
            .iter()
            .map(|&m| (m, if m.is_sampler() { lookup(m, t) } else { None }))
            .collect();
        match &evaluator {
            Evaluator::Full(binned) => {
                let dir = out_dir.join(format!("T_{label}"));
                fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e, false))?;
                let path = dir.join("KL_comparison.csv");
                write_kl_table(&path, &row_cells, direct_sample_kl.as_deref(), 0, |m| m.kl_column().to_string())?;
                files.push(path);
                for &k in &config.run.histogram_iterations {
                    let path = dir.join(format!("histo_comparison_iter_{k}.csv"));
                    write_histogram(&path, binned.spec(), &row_cells, k)?;
                    files.push(path);
                }
                for (m, cell) in &row_cells {
                    if let Some(cell) = cell {
                        let path = dir.join(format!("trace_{}.csv", m.config_name()));
                        write_trace(&path, &cell.summary.trace)?;
                        files.push(path);
                    }
                }
            }
            Evaluator::Marginals(bs) => {
                for i in 0..bs.len() {
                    let path = out_dir.join(format!("T{label}_KLmarginal{i}.csv"));
                    write_kl_table(&path, &row_cells, direct_sample_kl.as_deref(), i, |m| {
                        format!("KL_{i}_{}", m.histogram_column())
                    })?;
                    files.push(path);
                }
                for (m, cell) in &row_cells {
                    if let Some(cell) = cell {
                        let path = out_dir.join(format!("T{label}_trace_{}.csv", m.config_name()));
                        write_trace(&path, &cell.summary.trace)?;
                        files.push(path);
                    }
                }
            }
        }
    }
    if let Some(binned) = evaluator.full() {
        if !config.run.histogram_iterations.is_empty() {
            let path = out_dir.join("gt_density.csv");
            write_density(&path, binned.spec(), &target)?;
            files.push(path);
        }
    }

    let summary = ExperimentSummary {
        out_dir: out_dir.clone(),
        files: files.clone(),
        direct_sample_kl,
        cells: results.into_iter().map(|r| r.summary).collect(),
    };
    let metadata = serde_json::json!({
        "name": config.name,
        "seed": config.seed,
        "crate_version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "target_constants": target.estimate_constants(),
        "init": config.init(&target),
        "init_is_default_guess": config.run.init.is_none(),
        "direct_sample_kl": summary.direct_sample_kl,
        "cells": summary.cells,
        "wall_seconds": started.elapsed().as_secs_f64(),
    });
    let path = out_dir.join("metadata.json");
    let text = serde_json::to_string_pretty(&metadata).expect("metadata is serializable");
    fs::write(&path, text + "\n").map_err(|e| HarnessError::io(&path, e, false))?;
    let mut summary = summary;
    summary.files.push(path);
    Ok(summary)
}

fn run_cell(
    config: &ExperimentConfig,
    target: &Arc<GaussianMixture>,
    evaluator: &Evaluator,
    method: Method,
    half_scale: f64,
) -> Result<CellResult> {
    let context = |e: Error| e.context(format!("method {}, T={half_scale}", method.config_name()));
    let started = Instant::now();
    let path = config.build_path(method, target.clone())?;
    let schedule = config.schedule(method, half_scale)?;
    let run = &config.run;
    let mut ensemble = Ensemble::new(&config.init(target), run.n_chains, config.seed)?;
    let mut kl = BTreeMap::new();
    let mut histograms = BTreeMap::new();
    let summary = drive(
        path.as_ref(),
        &schedule,
        &config.policy,
        run.max_steps,
        run.max_sim_time,
        &mut ensemble,
        |e, _tau| {
            let k = e.step_index();
            let want_kl = run.records_kl(k);
            let want_hist = run.histogram_iterations.contains(&k);
            if want_kl || want_hist {
                let samples = e.snapshot();
                if want_kl {
                    kl.insert(k, evaluator.kl(&samples)?);
                }
                if let (true, Some(binned)) = (want_hist, evaluator.full()) {
                    histograms.insert(k, density_estimate(binned, &samples)?);
                }
            }
            Ok(())
        },
    )
    .map_err(context)?;
    log::info!(
        "{} T={half_scale}: {} steps, t={:.4} ({:.1}s)",
        method.config_name(),
        summary.final_iteration,
        summary.final_time,
        started.elapsed().as_secs_f64()
    );
    let trace = summary.trace.into_iter().filter(|r| run.records_kl(r.k)).collect();
    Ok(CellResult {
        summary: CellSummary {
            method,
            half_scale,
            tau_max: path.tau_max(),
            final_iteration: summary.final_iteration,
            final_time: summary.final_time,
            terminated_by: summary.terminated_by,
            wall_seconds: started.elapsed().as_secs_f64(),
            trace,
        },
        kl,
        histograms,
    })
}

/// Histogram density `count / (N · cell volume)` per cell.
fn density_estimate(binned: &BinnedTarget, samples: &Samples) -> Result<Vec<f64>> {
    let (counts, _) = binned.counts(samples)?;
    let volume: f64 = binned.spec().axes().iter().map(|a| (a.hi - a.lo) / a.bins as f64).product();
    let n = samples.len() as f64;
    Ok(counts.iter().map(|&c| c as f64 / (n * volume)).collect())
}

fn csv_writer(path: &Path) -> std::result::Result<csv::Writer<fs::File>, HarnessError> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| HarnessError::Csv { path: path.to_path_buf(), source: e })
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// One row per recorded iteration; a method that stopped earlier leaves
/// its later cells empty.
fn write_kl_table(
    path: &Path,
    cells: &[(Method, Option<&CellResult>)],
    direct: Option<&[f64]>,
    estimator: usize,
    column: impl Fn(Method) -> String,
) -> std::result::Result<(), HarnessError> {
    let csv_err = |e| HarnessError::Csv { path: path.to_path_buf(), source: e };
    let mut w = csv_writer(path)?;
    let mut header = vec!["iter".to_string()];
    header.extend(cells.iter().map(|(m, _)| column(*m)));
    w.write_record(&header).map_err(csv_err)?;
    let iterations: std::collections::BTreeSet<u64> =
        cells.iter().filter_map(|(_, c)| *c).flat_map(|c| c.kl.keys().copied()).collect();
    for k in iterations {
        let mut row = vec![k.to_string()];
        for (m, cell) in cells {
            row.push(match (m, cell) {
                (Method::DirectSample, _) => direct.map_or(String::new(), |d| fmt(d[estimator])),
                (_, Some(c)) => c.kl.get(&k).map_or(String::new(), |v| fmt(v[estimator])),
                (_, None) => String::new(),
            });
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e, false))
}

fn cell_coordinates(spec: &HistogramSpec) -> Vec<Vec<f64>> {
    let centers: Vec<Vec<f64>> = spec.axes().iter().map(|a| a.centers().collect()).collect();
    match centers.as_slice() {
        [x] => x.iter().map(|&v| vec![v]).collect(),
        [x, y] => x.iter().flat_map(|&a| y.iter().map(move |&b| vec![a, b])).collect(),
        _ => unreachable!("full-space specs have at most two axes"),
    }
}

fn coordinate_header(spec: &HistogramSpec) -> Vec<String> {
    if spec.dim() == 1 {
        vec!["x".into()]
    } else {
        vec!["x".into(), "y".into()]
    }
}

fn write_histogram(
    path: &Path,
    spec: &HistogramSpec,
    cells: &[(Method, Option<&CellResult>)],
    k: u64,
) -> std::result::Result<(), HarnessError> {
    let csv_err = |e| HarnessError::Csv { path: path.to_path_buf(), source: e };
    let mut w = csv_writer(path)?;
    let samplers: Vec<_> = cells.iter().filter(|(m, _)| m.is_sampler()).collect();
    let mut header = coordinate_header(spec);
    header.extend(samplers.iter().map(|(m, _)| m.histogram_column().to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for (i, xs) in cell_coordinates(spec).iter().enumerate() {
        let mut row: Vec<String> = xs.iter().map(|&v| fmt(v)).collect();
        for (_, cell) in &samplers {
            row.push(cell.and_then(|c| c.histograms.get(&k)).map_or(String::new(), |h| fmt(h[i])));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e, false))
}

fn write_density(path: &Path, spec: &HistogramSpec, target: &GaussianMixture) -> std::result::Result<(), HarnessError> {
    let csv_err = |e| HarnessError::Csv { path: path.to_path_buf(), source: e };
    let mut w = csv_writer(path)?;
    let mut header = coordinate_header(spec);
    header.push("Ground truth density".into());
    w.write_record(&header).map_err(csv_err)?;
    for xs in cell_coordinates(spec) {
        let p = target.log_density(&xs).map_err(HarnessError::Runtime)?.exp();
        let mut row: Vec<String> = xs.iter().map(|&v| fmt(v)).collect();
        row.push(fmt(p));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e, false))
}

fn write_trace(path: &Path, trace: &[StepRecord]) -> std::result::Result<(), HarnessError> {
    let csv_err = |e| HarnessError::Csv { path: path.to_path_buf(), source: e };
    let mut w = csv_writer(path)?;
    w.write_record(["iter", "h", "tau", "t"]).map_err(csv_err)?;
    for r in trace {
        w.write_record([r.k.to_string(), fmt(r.h), fmt(r.tau), fmt(r.t)]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e, false))
}
