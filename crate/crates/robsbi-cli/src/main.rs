//! `robsbi` — run, validate and summarize experiment configurations.
//!
//! Exit status: 0 on success, 2 for an invalid configuration, 1 for a
//! runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use robsbi::experiments::{check_summary, run, Experiment, RunConfig};
use robsbi::SbiError;

#[derive(Parser)]
#[command(
    name = "robsbi",
    version,
    about = "Robust simulation-based inference experiments"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write CSV/JSON artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Recompute the summary from the replication CSV and compare it with
    /// the stored summary JSON.
    Summarize {
        /// Output directory of a previous run.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Alternatively, the config whose output directory to read.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the preset configuration of an experiment.
    Preset {
        #[arg(value_parser = parse_experiment)]
        experiment: Experiment,
    },
}

fn parse_experiment(s: &str) -> Result<Experiment, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| {
        let names: Vec<String> = Experiment::ALL
            .iter()
            .map(|e| serde_json::to_string(e).unwrap_or_default())
            .collect();
        format!(
            "unknown experiment `{s}`; expected one of {}",
            names.join(", ")
        )
    })
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<SbiError> for Failure {
    fn from(e: SbiError) -> Self {
        match e {
            SbiError::Config(m) => Failure::Config(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load(path: &Path) -> Result<RunConfig, Failure> {
    RunConfig::load(path).map_err(|e| match e {
        SbiError::Io(io) => Failure::Config(format!("{}: {io}", path.display())),
        other => Failure::from(other),
    })
}

fn execute(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seeds.master = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let violations = cfg.violations();
            if !violations.is_empty() {
                return Err(Failure::Config(violations.join("\n")));
            }
            let result = run(&cfg)?;
            eprintln!(
                "wrote {} records for {} replication(s) to {}",
                result.records.len(),
                result.summary.replications,
                result.config.output_dir.display()
            );
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            let violations = cfg.violations();
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({ "violations": violations }))
                    .unwrap_or_default()
            );
            if violations.is_empty() {
                Ok(())
            } else {
                Err(Failure::Config(format!(
                    "{} violation(s)",
                    violations.len()
                )))
            }
        }
        Command::Summarize { out, config } => {
            let dir = match (out, config) {
                (Some(d), _) => d,
                (None, Some(c)) => load(&c)?.output_dir,
                (None, None) => {
                    return Err(Failure::Config("summarize needs --out or --config".into()))
                }
            };
            let (summary, diff) = check_summary(&dir)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).unwrap_or_default()
            );
            if diff <= 1e-9 {
                eprintln!(
                    "summary.json agrees with the replication records (max difference {diff:e})"
                );
                Ok(())
            } else {
                Err(Failure::Runtime(format!(
                    "summary.json disagrees with the replication records (max difference {diff:e})"
                )))
            }
        }
        Command::Preset { experiment } => {
            println!(
                "{}",
                serde_json::to_string_pretty(&RunConfig::preset(experiment)).unwrap_or_default()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
