//! One experiment: load data, train, evaluate, write artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use kancal_core::calibration::{
    bin_stats, evaluate, fit_posthoc_temperature, tau_sweep, BinScheme, CalibrationReport, EvalConfig, EvalSet,
    PosthocFit, TauCurve,
};
use kancal_core::data::Dataset;
use kancal_core::losses::scale_logits;
use kancal_core::network::Model;
use kancal_core::optim::{train, TrainHistory};
use kancal_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::artifacts;
use crate::checkpoint;
use crate::config::{check_data_present, load_data, ExperimentConfig, LoadedData};
use crate::error::{CliError, Result};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const RELIABILITY_FILE: &str = "reliability.csv";
pub const TAU_CURVE_FILE: &str = "tau_curve.csv";
pub const LOGIT_HIST_FILE: &str = "logit_hist.csv";
pub const LOGITS_FILE: &str = "test_logits.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.json";
pub const POSTHOC_FILE: &str = "posthoc.json";

/// Post-hoc temperature fitted on validation logits, with test metrics
/// before and after rescaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosthocReport {
    pub fit: PosthocFit,
    pub before: CalibrationReport,
    pub after: CalibrationReport,
}

/// Fits `T*` on `val` and evaluates `test` at `T = 1` and `T = T*`. Both
/// logit matrices should already include any learned temperature.
pub fn posthoc_report(
    val_logits: &Matrix,
    val_labels: &[usize],
    test_logits: &Matrix,
    test_labels: &[usize],
    eval_cfg: &EvalConfig,
) -> Result<PosthocReport> {
    let fit = fit_posthoc_temperature(val_logits, val_labels)?;
    let before = evaluate(&EvalSet::from_logits(test_logits, test_labels.to_vec(), 1.0)?, eval_cfg)?;
    let after = evaluate(
        &EvalSet::from_logits(test_logits, test_labels.to_vec(), fit.temperature)?,
        eval_cfg,
    )?;
    Ok(PosthocReport { fit, before, after })
}

/// Logits of `model` on `ds`, divided by the learned temperature.
pub fn scaled_logits(model: &Model, ds: &Dataset, tau: f64) -> Result<Matrix> {
    Ok(scale_logits(&model.predict(&ds.features)?, tau)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub output_dir: PathBuf,
    pub history: TrainHistory,
    pub tau: f64,
    pub param_count: usize,
    pub tau_curve: Option<TauCurve>,
    pub posthoc: Option<PosthocReport>,
}

/// Validates the config, checks the data exists, then trains and writes
/// artifacts into `out_dir`. Nothing is written if validation or data
/// lookup fails.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path, data_dir: Option<&Path>) -> Result<RunResult> {
    cfg.validate()?;
    check_data_present(&cfg.data, data_dir)?;
    let grid = (cfg.model.grid_range[0], cfg.model.grid_range[1]);
    let data = load_data(&cfg.data, grid, data_dir)?;
    run_loaded(cfg, &data, out_dir)
}

pub fn run_loaded(cfg: &ExperimentConfig, data: &LoadedData, out_dir: &Path) -> Result<RunResult> {
    cfg.validate()?;
    let eval_cfg = cfg.eval.eval_config();
    let mut model = cfg.model.build(data.input_dim(), data.class_count(), cfg.train.seed)?;
    let outcome = train(&mut model, &data.train, Some(&data.test), &cfg.train, &eval_cfg)?;
    let tau = outcome.tau;

    let raw_test = model.predict(&data.test.features)?;
    let test_scaled = scale_logits(&raw_test, tau)?;
    let final_eval = EvalSet::from_logits(&test_scaled, data.test.labels.clone(), 1.0)?;
    let reliability = bin_stats(&final_eval, cfg.eval.bins, BinScheme::EqualWidth)?;
    let tau_curve = match cfg.eval.tau_curve {
        Some(g) => Some(tau_sweep(&raw_test, &data.test.labels, &g.values(), cfg.eval.bins)?),
        None => None,
    };
    let posthoc = if cfg.eval.posthoc {
        let val_scaled = scaled_logits(&model, &data.val, tau)?;
        Some(posthoc_report(
            &val_scaled,
            &data.val.labels,
            &test_scaled,
            &data.test.labels,
            &eval_cfg,
        )?)
    } else {
        None
    };

    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut resolved = cfg.clone();
    resolved.output_dir = Some(out_dir.to_path_buf());
    write_json(&out_dir.join(CONFIG_FILE), &resolved)?;
    artifacts::write_metrics_jsonl(&out_dir.join(METRICS_FILE), &outcome.history)?;
    artifacts::write_reliability(&out_dir.join(RELIABILITY_FILE), &reliability)?;
    if let Some(c) = &tau_curve {
        artifacts::write_tau_curve(&out_dir.join(TAU_CURVE_FILE), c)?;
    }
    let hist = artifacts::logit_histogram(&raw_test, cfg.eval.hist_bins);
    artifacts::write_logit_hist(&out_dir.join(LOGIT_HIST_FILE), &hist)?;
    artifacts::write_logits(&out_dir.join(LOGITS_FILE), &raw_test, &data.test.labels)?;
    checkpoint::save(&out_dir.join(CHECKPOINT_FILE), &model, tau)?;
    if let Some(p) = &posthoc {
        write_json(&out_dir.join(POSTHOC_FILE), p)?;
    }
    Ok(RunResult {
        output_dir: out_dir.to_path_buf(),
        history: outcome.history,
        tau,
        param_count: model.param_count(),
        tau_curve,
        posthoc,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Checks that a checkpoint fits the data it is about to be applied to.
pub fn check_model_fits(model: &Model, data: &LoadedData) -> Result<()> {
    if model.input_dim() != data.input_dim() || model.class_count() < data.class_count() {
        return Err(CliError::Config(format!(
            "checkpoint expects {} inputs and {} classes; data has {} and {}",
            model.input_dim(),
            model.class_count(),
            data.input_dim(),
            data.class_count()
        )));
    }
    Ok(())
}
