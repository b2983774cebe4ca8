//! Experiment harness: configs, sweeps and the oracle suite.

pub mod config;
pub mod run;
#[cfg(feature = "oracles")]
pub mod verify;

use std::path::{Path, PathBuf};

use crate::error::Error;

pub use config::{ExperimentConfig, Method};
pub use run::{run_experiment, ExperimentSummary, RunOptions};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(Error),
    #[error("run failed: {0}")]
    Runtime(Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
        /// Detected before any simulation started.
        upfront: bool,
    },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error, upfront: bool) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source, upfront }
    }

    /// 1 for configuration problems, 2 for failures during or after simulation.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Io { upfront: true, .. } => 1,
            _ => 2,
        }
    }
}
