//! Grid sweeps over experiment config fields.
//!
//! A sweep file holds a base config and a map from dotted field paths to
//! value lists:
//!
//! ```json
//! {
//!   "base": { "train": { "epochs": 5 } },
//!   "axes": { "model.grid_size": [3, 5], "model.degree": [2, 3] },
//!   "budget": 120000
//! }
//! ```
//!
//! Every combination becomes one run in `run_NNNN/`. Unless `train.seed` is
//! itself an axis, run `i` uses seed `base.train.seed + i`. Runs whose
//! parameter count exceeds the budget are not trained and appear in the
//! summary as `skipped_budget`. A failing run is recorded as `failed` and
//! the sweep carries on.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::{check_data_present, load_data, ExperimentConfig, LoadedData};
use crate::error::{CliError, Result};
use crate::run::{run_loaded, write_json};

/// Bumped whenever summary.csv columns change.
pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
pub const SUMMARY_FILE: &str = "summary.csv";
pub const AXIS_MEANS_FILE: &str = "axis_means.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub base: ExperimentConfig,
    pub axes: Map<String, Value>,
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default)]
    pub workers: Option<usize>,
}

impl SweepConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::Config(format!("sweep file {} not found", path.display())),
            _ => CliError::io(path, e),
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))
    }

    fn axes(&self) -> Result<Vec<(String, Vec<Value>)>> {
        self.axes
            .iter()
            .map(|(k, v)| match v.as_array() {
                Some(a) if !a.is_empty() => Ok((k.clone(), a.clone())),
                _ => Err(CliError::Config(format!("axis {k:?} needs a non-empty list"))),
            })
            .collect()
    }

    /// All combinations, last axis varying fastest, with seeds assigned.
    pub fn expand(&self) -> Result<Vec<Combo>> {
        let axes = self.axes()?;
        let total: usize = axes.iter().map(|(_, v)| v.len()).product();
        let seeded = axes.iter().any(|(k, _)| k == "train.seed");
        let mut out = Vec::with_capacity(total);
        for i in 0..total {
            let mut rem = i;
            let mut values = vec![Value::Null; axes.len()];
            for (a, (_, vals)) in axes.iter().enumerate().rev() {
                values[a] = vals[rem % vals.len()].clone();
                rem /= vals.len();
            }
            let mut cfg = self.base.clone();
            for ((path, _), v) in axes.iter().zip(&values) {
                cfg.set_path(path, v.clone())?;
            }
            if !seeded {
                cfg.train.seed = self.base.train.seed.wrapping_add(i as u64);
            }
            cfg.validate()?;
            out.push(Combo {
                index: i,
                axis_values: axes.iter().map(|(k, _)| k.clone()).zip(values).collect(),
                config: cfg,
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Combo {
    pub index: usize,
    pub axis_values: Vec<(String, Value)>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
    SkippedBudget,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Failed => "failed",
            RunStatus::SkippedBudget => "skipped_budget",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub accuracy: f64,
    pub ece: f64,
    pub ada_ece: f64,
    pub classwise_ece: f64,
    pub mce: f64,
    pub smece: f64,
    pub nll: f64,
    pub brier: f64,
    pub tau: f64,
    pub best_accuracy: f64,
    pub best_ece: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub index: usize,
    pub run_dir: String,
    pub status: RunStatus,
    pub seed: u64,
    pub param_count: usize,
    pub axis_values: Vec<(String, Value)>,
    pub metrics: Option<FinalMetrics>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SummaryRow>,
}

pub fn run_dir_name(index: usize) -> String {
    format!("run_{index:04}")
}

/// Runs every combination with `workers` threads and writes the summary
/// files. Data sets are loaded once per distinct data section and grid.
pub fn sweep(cfg: &SweepConfig, out_dir: &Path, data_dir: Option<&Path>, workers: usize) -> Result<SweepResult> {
    let combos = cfg.expand()?;
    for c in &combos {
        check_data_present(&c.config.data, data_dir)?;
    }
    let mut cache: HashMap<String, Arc<LoadedData>> = HashMap::new();
    let mut datasets = Vec::with_capacity(combos.len());
    for c in &combos {
        let grid = (c.config.model.grid_range[0], c.config.model.grid_range[1]);
        let key = format!("{}|{:?}", serde_json::to_string(&c.config.data)?, grid);
        let data = match cache.get(&key) {
            Some(d) => d.clone(),
            None => {
                let d = Arc::new(load_data(&c.config.data, grid, data_dir)?);
                cache.insert(key, d.clone());
                d
            }
        };
        datasets.push(data);
    }
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    write_json(&out_dir.join("sweep.json"), cfg)?;

    let rows: Mutex<Vec<Option<SummaryRow>>> = Mutex::new(vec![None; combos.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers.max(1).min(combos.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= combos.len() {
                    break;
                }
                let row = run_combo(&combos[i], &datasets[i], out_dir, cfg.budget);
                rows.lock().expect("no poisoned workers")[i] = Some(row);
            });
        }
    });
    let rows: Vec<SummaryRow> = rows
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every combo ran"))
        .collect();
    write_summary(&out_dir.join(SUMMARY_FILE), &rows)?;
    write_axis_means(&out_dir.join(AXIS_MEANS_FILE), &rows)?;
    Ok(SweepResult { rows })
}

fn run_combo(c: &Combo, data: &LoadedData, out_dir: &Path, budget: Option<usize>) -> SummaryRow {
    let param_count = c.config.model.param_count(data.input_dim(), data.class_count());
    let mut row = SummaryRow {
        index: c.index,
        run_dir: run_dir_name(c.index),
        status: RunStatus::Ok,
        seed: c.config.train.seed,
        param_count,
        axis_values: c.axis_values.clone(),
        metrics: None,
        error: String::new(),
    };
    if budget.is_some_and(|b| param_count > b) {
        row.status = RunStatus::SkippedBudget;
        row.error = format!("{param_count} parameters exceed budget {}", budget.unwrap_or(0));
        return row;
    }
    let dir: PathBuf = out_dir.join(&row.run_dir);
    match run_loaded(&c.config, data, &dir) {
        Ok(r) => {
            let last = r.history.last().expect("at least one epoch");
            row.metrics = Some(FinalMetrics {
                accuracy: last.report.accuracy,
                ece: last.report.ece,
                ada_ece: last.report.ada_ece,
                classwise_ece: last.report.classwise_ece,
                mce: last.report.mce,
                smece: last.report.smece,
                nll: last.report.nll,
                brier: last.report.brier,
                tau: r.tau,
                best_accuracy: r.history.best_accuracy().unwrap_or(f64::NAN),
                best_ece: r.history.min_ece().unwrap_or(f64::NAN),
            });
        }
        Err(e) => {
            row.status = RunStatus::Failed;
            row.error = e.to_string();
        }
    }
    row
}

/// Axis values as CSV cells: strings unquoted, everything else as JSON.
pub fn value_cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

const METRIC_COLUMNS: [&str; 11] = [
    "final_accuracy",
    "final_ece",
    "final_ada_ece",
    "final_classwise_ece",
    "final_mce",
    "final_smece",
    "final_nll",
    "final_brier",
    "final_tau",
    "best_accuracy",
    "best_ece",
];

fn metric_cells(m: Option<&FinalMetrics>) -> Vec<String> {
    match m {
        None => vec![String::new(); METRIC_COLUMNS.len()],
        Some(m) => [
            m.accuracy,
            m.ece,
            m.ada_ece,
            m.classwise_ece,
            m.mce,
            m.smece,
            m.nll,
            m.brier,
            m.tau,
            m.best_accuracy,
            m.best_ece,
        ]
        .iter()
        .map(|v| v.to_string())
        .collect(),
    }
}

/// Columns: `schema_version, run, status, seed, param_count`, one column
/// per axis (named by its path), the final and best metrics, and `error`.
pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["schema_version", "run", "status", "seed", "param_count"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if let Some(r) = rows.first() {
        header.extend(r.axis_values.iter().map(|(k, _)| k.clone()));
    }
    header.extend(METRIC_COLUMNS.iter().map(|s| s.to_string()));
    header.push("error".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            SUMMARY_SCHEMA_VERSION.to_string(),
            r.run_dir.clone(),
            r.status.as_str().to_string(),
            r.seed.to_string(),
            r.param_count.to_string(),
        ];
        rec.extend(r.axis_values.iter().map(|(_, v)| value_cell(v)));
        rec.extend(metric_cells(r.metrics.as_ref()));
        rec.push(r.error.clone());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Mean final metrics of successful runs for every value of every axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisMean {
    pub axis: String,
    pub value: String,
    pub runs: usize,
    pub mean_ece: f64,
    pub mean_smece: f64,
    pub mean_accuracy: f64,
}

pub fn axis_means(rows: &[SummaryRow]) -> Vec<AxisMean> {
    let mut out: Vec<AxisMean> = Vec::new();
    let Some(first) = rows.first() else {
        return out;
    };
    for (a, (axis, _)) in first.axis_values.iter().enumerate() {
        let mut order: Vec<String> = Vec::new();
        let mut acc: HashMap<String, (usize, f64, f64, f64)> = HashMap::new();
        for r in rows {
            let key = value_cell(&r.axis_values[a].1);
            if !order.contains(&key) {
                order.push(key.clone());
            }
            if let (RunStatus::Ok, Some(m)) = (r.status, &r.metrics) {
                let e = acc.entry(key).or_default();
                e.0 += 1;
                e.1 += m.ece;
                e.2 += m.smece;
                e.3 += m.accuracy;
            }
        }
        for key in order {
            let (n, ece, smece, accu) = acc.get(&key).copied().unwrap_or_default();
            let mean = |s: f64| if n == 0 { f64::NAN } else { s / n as f64 };
            out.push(AxisMean {
                axis: axis.clone(),
                value: key,
                runs: n,
                mean_ece: mean(ece),
                mean_smece: mean(smece),
                mean_accuracy: mean(accu),
            });
        }
    }
    out
}

pub fn write_axis_means(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["axis", "value", "runs", "mean_ece", "mean_smece", "mean_accuracy"])?;
    for m in axis_means(rows) {
        w.write_record([
            m.axis,
            m.value,
            m.runs.to_string(),
            m.mean_ece.to_string(),
            m.mean_smece.to_string(),
            m.mean_accuracy.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
