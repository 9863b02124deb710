//! Batch command-line front end for the lactate forecasting pipeline:
//! synthesize cohorts, ingest raw extracts, run cross-validated
//! imputer-by-model experiments, and render reports.

mod cmds;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

const AFTER_HELP: &str = "Environment:
  LACTATE_OUT_ROOT  prefix prepended to relative --out paths
  LACTATE_JOBS      default worker count for `experiment` (overridden by --jobs)

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.";

#[derive(Parser)]
#[command(name = "lactate", version, about = "Blood-lactate forecasting pipeline", after_help = AFTER_HELP)]
struct Cli {
    /// Emit machine-readable JSON lines on stderr instead of plain logs.
    #[arg(long, global = true)]
    log_json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort (and optional corruption) from a config.
    Synth {
        /// JSON config with `cohort` and optional `missingness` sections.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ingest raw source tables into an aligned grid.
    Ingest {
        /// Directory of source CSV tables.
        #[arg(long)]
        data: PathBuf,
        /// Schema map JSON (defaults to the shipped eICU mapping).
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Feature dictionary JSON (defaults to the shipped dictionary).
        #[arg(long)]
        features: Option<PathBuf>,
        /// Cohort criteria JSON (defaults: age > 18, >= 2 lactates, >= 18 h).
        #[arg(long)]
        cohort: Option<PathBuf>,
        /// Resampling bin width in minutes.
        #[arg(long, default_value_t = 120)]
        bin_width: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the cross-validated imputer-by-model experiment grid.
    Experiment {
        /// JSON config with `data` and `experiment` sections.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated imputer subset (e.g. mean,indicator_mean).
        #[arg(long)]
        imputers: Option<String>,
        /// Comma-separated model subset (e.g. lasso,lstm).
        #[arg(long)]
        models: Option<String>,
        /// Parallel (imputer, fold) jobs; results are independent of this.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Re-render the Markdown table and plot CSV from experiment results.
    Report {
        /// Directory holding results_folds.csv.
        #[arg(long)]
        results: PathBuf,
        /// Output directory (defaults to the results directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Standalone imputer fit/apply against grid directories.
    Impute {
        #[command(subcommand)]
        action: ImputeAction,
    },
    /// Print version information.
    Version,
}

#[derive(Subcommand)]
enum ImputeAction {
    /// Fit an imputer on a grid and persist its state file.
    Fit {
        /// Method name (mean, median, group_mean, feed_forward,
        /// indicator_mean, ppca, mf, soft_impute, knn, miss_forest, mice, ae).
        #[arg(long)]
        method: Option<String>,
        /// Full ImputerSpec JSON (overrides --method).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        grid: PathBuf,
        /// State file path to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a persisted imputer state to a grid.
    Apply {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

pub struct Logger {
    json: bool,
}

impl Logger {
    pub fn info(&self, stage: &str, msg: &str) {
        if self.json {
            eprintln!(
                "{}",
                serde_json::json!({"level": "info", "stage": stage, "msg": msg})
            );
        } else {
            eprintln!("[{stage}] {msg}");
        }
    }
}

/// Relative output paths live under LACTATE_OUT_ROOT when it is set.
fn resolve_out(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os("LACTATE_OUT_ROOT") {
        Some(root) => Path::new(&root).join(path),
        None => path.to_path_buf(),
    }
}

fn env_jobs() -> Option<usize> {
    std::env::var("LACTATE_JOBS").ok()?.parse().ok()
}

fn run(cli: Cli, log: &Logger) -> lactate_core::Result<()> {
    match cli.command {
        Command::Synth { config, out } => cmds::cmd_synth(&config, &resolve_out(&out), log),
        Command::Ingest {
            data,
            schema,
            features,
            cohort,
            bin_width,
            out,
        } => cmds::cmd_ingest(
            &data,
            schema.as_deref(),
            features.as_deref(),
            cohort.as_deref(),
            bin_width,
            &resolve_out(&out),
            log,
        ),
        Command::Experiment {
            config,
            out,
            imputers,
            models,
            jobs,
        } => cmds::cmd_experiment(
            &config,
            &resolve_out(&out),
            &cmds::ExperimentFlags {
                imputers: imputers.as_deref(),
                models: models.as_deref(),
                jobs: jobs.or_else(env_jobs),
            },
            log,
        ),
        Command::Report { results, out } => {
            cmds::cmd_report(&results, out.as_deref().map(resolve_out).as_deref(), log)
        }
        Command::Impute { action } => match action {
            ImputeAction::Fit {
                method,
                spec,
                grid,
                out,
            } => cmds::cmd_impute_fit(
                method.as_deref(),
                spec.as_deref(),
                &grid,
                &resolve_out(&out),
                log,
            ),
            ImputeAction::Apply { state, grid, out } => {
                cmds::cmd_impute_apply(&state, &grid, &resolve_out(&out), log)
            }
        },
        Command::Version => {
            println!("lactate {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let log = Logger { json: cli.log_json };
    match run(cli, &log) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if log.json {
                eprintln!(
                    "{}",
                    serde_json::json!({"level": "error", "msg": e.to_string()})
                );
            } else {
                eprintln!("error: {e}");
            }
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
