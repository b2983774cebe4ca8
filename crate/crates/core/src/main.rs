use std::path::PathBuf;
use std::process::ExitCode;

use annealed_langevin::experiment::config::constants_table;
use annealed_langevin::experiment::{run_experiment, verify, ExperimentConfig, RunOptions};
use clap::{Parser, Subcommand};

/// Annealed Langevin sampling experiments on Gaussian mixtures.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Worker threads for chain updates (default: all cores).
    #[arg(long, global = true, env = "ANNEALED_LANGEVIN_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run method × T cells concurrently.
        #[arg(long)]
        parallel: bool,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle suite.
    Verify,
    /// Print step-size constants per method.
    Constants {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match cli.command {
        Command::Run { config, parallel, out } => {
            let config = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("configuration error: {e}");
                    return ExitCode::from(1);
                }
            };
            match run_experiment(&config, &RunOptions { parallel, out_dir: out }) {
                Ok(summary) => {
                    for f in &summary.files {
                        println!("{}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Command::Verify => {
            let checks = verify::run_all();
            let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
            for c in &checks {
                let status = if c.passed { "PASS" } else { "FAIL" };
                println!("{status}  {:width$}  {}", c.name, c.detail);
            }
            if checks.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
        Command::Constants { config } => {
            match ExperimentConfig::load(&config).and_then(|c| constants_table(&c)) {
                Ok(table) => {
                    print!("{table}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("configuration error: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
