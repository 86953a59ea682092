//! Command-line interface. Flags override config-file fields, which
//! override built-in defaults.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use kancal_core::calibration::{bin_stats, evaluate, BinScheme, EvalConfig, EvalSet, DEFAULT_BINS};

use crate::artifacts;
use crate::checkpoint;
use crate::config::{data_dir_from_env, load_data, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::run::{self, posthoc_report, scaled_logits};
use crate::sweep::{self, SweepConfig};

pub const DEFAULT_OUTPUT_DIR: &str = "kancal-out";

#[derive(Debug, Parser)]
#[command(name = "kancal", version, about = "Train and evaluate calibrated spline KANs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for relative data paths [env: KANCAL_DATA_DIR].
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write its artifacts.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Train every combination of a parameter grid.
    Sweep {
        /// Sweep file with `base`, `axes` and optional `budget`.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Base seed; run `i` gets `seed + i`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Skip runs with more parameters than this.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Fit a post-hoc temperature for a checkpoint on the validation split.
    Posthoc {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Dump test logits and their histogram for a checkpoint.
    Logits {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bins: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Calibration metrics for a logits CSV (`label,logit_0,...`).
    Metrics {
        #[arg(long)]
        logits: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        /// Temperature applied to the logits before evaluation.
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        /// Also write reliability.csv here.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

fn data_dir(flag: &Option<PathBuf>) -> Option<PathBuf> {
    flag.clone().or_else(data_dir_from_env)
}

/// Loads the config file (or defaults) and applies flag overrides.
pub fn resolve_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    if let Some(d) = &common.output_dir {
        cfg.output_dir = Some(d.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { common } => {
            let cfg = resolve_config(&common)?;
            let out = output_dir(&cfg);
            let r = run::run(&cfg, &out, data_dir(&common.data_dir).as_deref())?;
            let last = r.history.last().expect("at least one epoch");
            println!(
                "{}: accuracy {:.4}  ece {:.4}  smece {:.4}  nll {:.4}  tau {:.4}",
                out.display(),
                last.report.accuracy,
                last.report.ece,
                last.report.smece,
                last.report.nll,
                r.tau
            );
            Ok(())
        }
        Command::Sweep {
            config,
            output_dir,
            seed,
            workers,
            budget,
            data_dir: dd,
        } => {
            let mut sc = SweepConfig::from_file(&config)?;
            if let Some(s) = seed {
                sc.base.train.seed = s;
            }
            if budget.is_some() {
                sc.budget = budget;
            }
            let out = output_dir
                .or_else(|| sc.base.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
            let workers = workers.or(sc.workers).unwrap_or(1);
            let r = sweep::sweep(&sc, &out, data_dir(&dd).as_deref(), workers)?;
            let count = |s| r.rows.iter().filter(|x| x.status == s).count();
            println!(
                "{}: {} ok, {} failed, {} skipped",
                out.join(sweep::SUMMARY_FILE).display(),
                count(sweep::RunStatus::Ok),
                count(sweep::RunStatus::Failed),
                count(sweep::RunStatus::SkippedBudget)
            );
            Ok(())
        }
        Command::Posthoc { checkpoint, common } => {
            let cfg = resolve_config(&common)?;
            let ck = checkpoint::load(&checkpoint)?;
            let dd = data_dir(&common.data_dir);
            let grid = (cfg.model.grid_range[0], cfg.model.grid_range[1]);
            let data = load_data(&cfg.data, grid, dd.as_deref())?;
            run::check_model_fits(&ck.model, &data)?;
            let val = scaled_logits(&ck.model, &data.val, ck.tau)?;
            let test = scaled_logits(&ck.model, &data.test, ck.tau)?;
            let report = posthoc_report(
                &val,
                &data.val.labels,
                &test,
                &data.test.labels,
                &cfg.eval.eval_config(),
            )?;
            if let Some(out) = &common.output_dir {
                std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
                run::write_json(&out.join(run::POSTHOC_FILE), &report)?;
            }
            print_json(&report)
        }
        Command::Logits {
            checkpoint,
            bins,
            common,
        } => {
            let cfg = resolve_config(&common)?;
            let ck = checkpoint::load(&checkpoint)?;
            let dd = data_dir(&common.data_dir);
            let grid = (cfg.model.grid_range[0], cfg.model.grid_range[1]);
            let data = load_data(&cfg.data, grid, dd.as_deref())?;
            run::check_model_fits(&ck.model, &data)?;
            let logits = ck.model.predict(&data.test.features)?;
            let out = output_dir(&cfg);
            std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
            let h = artifacts::logit_histogram(&logits, bins.unwrap_or(cfg.eval.hist_bins));
            artifacts::write_logit_hist(&out.join(run::LOGIT_HIST_FILE), &h)?;
            artifacts::write_logits(&out.join(run::LOGITS_FILE), &logits, &data.test.labels)?;
            println!("{}", out.join(run::LOGIT_HIST_FILE).display());
            Ok(())
        }
        Command::Metrics {
            logits,
            bins,
            tau,
            output_dir,
        } => {
            let report = metrics_for(&logits, bins, tau, output_dir.as_deref())?;
            print_json(&report)
        }
    }
}

/// Full metric report for a logits CSV.
pub fn metrics_for(
    logits: &Path,
    bins: usize,
    tau: f64,
    out: Option<&Path>,
) -> Result<kancal_core::calibration::CalibrationReport> {
    if bins == 0 {
        return Err(CliError::Config("bins must be positive".into()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(CliError::Config(format!("tau must be positive, got {tau}")));
    }
    let (m, labels) = artifacts::read_logits(logits)?;
    let eval = EvalSet::from_logits(&m, labels, tau)?;
    let report = evaluate(
        &eval,
        &EvalConfig {
            bins,
            smece_bandwidth: None,
        },
    )?;
    if let Some(out) = out {
        std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        let stats = bin_stats(&eval, bins, BinScheme::EqualWidth)?;
        artifacts::write_reliability(&out.join(run::RELIABILITY_FILE), &stats)?;
    }
    Ok(report)
}
