//! Command line front end for the benchmark pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use medbench_core::catalog::load_catalog;
use medbench_core::config::{load_config, parse_config, ExperimentConfig};
use medbench_core::eval::DEFAULT_DIAGNOSIS_MATCH_THRESHOLD;
use medbench_core::runner::{preflight, regenerate_reports, rescore, run_experiment, RunError};

#[derive(Parser)]
#[command(
    name = "medbench",
    about = "Offline benchmark for structured extraction from clinical notes",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full experiment grid described by a config file.
    Run {
        /// Experiment config (TOML).
        #[arg(long)]
        config: PathBuf,
    },
    /// Check a config and its environment without generating anything.
    Validate {
        /// Experiment config (TOML).
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-score an existing responses.jsonl against the configured gold data.
    Score {
        /// Experiment config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// A responses.jsonl produced by `run`.
        #[arg(long)]
        responses: PathBuf,
        /// Output directory; defaults to the directory holding the responses file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild aggregate.csv, summary.md, and plot data from a run directory.
    Report {
        /// A run directory containing scores.jsonl.
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Parse a catalog file and print what was kept and what was rejected.
    CatalogStats {
        /// Catalog file (one code plus description per line).
        #[arg(long)]
        catalog: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config } => {
            let config = load_config(&config)?;
            let artifacts = run_experiment(&config).map_err(explain_run_error)?;
            println!("run directory: {}", artifacts.run_dir.display());
            println!("responses:     {}", artifacts.responses_path.display());
            println!("scores:        {}", artifacts.scores_path.display());
            println!("aggregate:     {}", artifacts.aggregate_path.display());
            println!("summary:       {}", artifacts.summary_path.display());
            Ok(())
        }
        Command::Validate { config } => {
            let config = load_config(&config)?;
            match preflight(&config) {
                Ok(()) => {
                    println!("config ok: {} model(s), {} strategy(ies)",
                        config.models.len(), config.strategies.len());
                    Ok(())
                }
                Err(problems) => {
                    for problem in &problems {
                        eprintln!("problem: {problem}");
                    }
                    bail!("{} problem(s) found", problems.len());
                }
            }
        }
        Command::Score { config, responses, out } => {
            let config = load_config(&config)?;
            let out_dir = match out {
                Some(dir) => dir,
                None => responses
                    .parent()
                    .map(PathBuf::from)
                    .context("responses path has no parent directory")?,
            };
            let artifacts =
                rescore(&config, &responses, &out_dir).map_err(explain_run_error)?;
            println!("scored {} response(s)", artifacts.scores.len());
            println!("scores:    {}", artifacts.scores_path.display());
            println!("aggregate: {}", artifacts.aggregate_path.display());
            println!("summary:   {}", artifacts.summary_path.display());
            Ok(())
        }
        Command::Report { run_dir } => {
            let threshold = run_threshold(&run_dir);
            let agg = regenerate_reports(&run_dir, threshold).map_err(explain_run_error)?;
            println!("rebuilt reports for {} cell(s) in {}", agg.cells.len(), run_dir.display());
            Ok(())
        }
        Command::CatalogStats { catalog } => {
            let (catalog, errors) = load_catalog(&catalog)?;
            println!("entries: {}", catalog.len());
            println!("rejected lines: {}", errors.len());
            for error in errors.iter().take(10) {
                println!("  line {}: {}", error.line_no, error.kind);
            }
            if errors.len() > 10 {
                println!("  ... and {} more", errors.len() - 10);
            }
            Ok(())
        }
    }
}

/// The diagnosis-match threshold a run was produced with, recovered from its
/// config snapshot; the default when the snapshot is missing or unreadable.
fn run_threshold(run_dir: &std::path::Path) -> f64 {
    std::fs::read_to_string(run_dir.join("config.resolved"))
        .ok()
        .and_then(|text| parse_config(&text).ok())
        .map(|config: ExperimentConfig| config.eval.diagnosis_match_threshold)
        .unwrap_or(DEFAULT_DIAGNOSIS_MATCH_THRESHOLD)
}

fn explain_run_error(e: RunError) -> anyhow::Error {
    if let RunError::Preflight(problems) = &e {
        let mut lines = String::new();
        for problem in problems {
            lines.push_str(&format!("\n  - {problem}"));
        }
        anyhow::anyhow!("preflight found {} problem(s):{lines}", problems.len())
    } else {
        anyhow::Error::new(e)
    }
}
