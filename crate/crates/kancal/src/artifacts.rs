//! Run artifacts: JSONL histories and the CSV files read by the plotting
//! scripts. All CSVs are UTF-8, comma-separated, with a header row.
//!
//! | file              | columns                                                    |
//! |-------------------|------------------------------------------------------------|
//! | `metrics.jsonl`   | one `EpochRecord` JSON object per line                     |
//! | `reliability.csv` | `bin_lower,bin_upper,count,accuracy,confidence,gap`        |
//! | `tau_curve.csv`   | `tau,ece,is_argmin`                                        |
//! | `logit_hist.csv`  | `bin_lower,bin_upper,count`                                |
//! | `test_logits.csv` | `label,logit_0,...,logit_{K-1}`                            |

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use kancal_core::calibration::{BinStats, TauCurve};
use kancal_core::optim::TrainHistory;
use kancal_core::Matrix;

use crate::error::{CliError, Result};

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(CliError::from)
}

pub fn write_metrics_jsonl(path: &Path, history: &TrainHistory) -> Result<()> {
    let mut w = create(path)?;
    for r in &history.records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_reliability(path: &Path, stats: &BinStats) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["bin_lower", "bin_upper", "count", "accuracy", "confidence", "gap"])?;
    for b in &stats.bins {
        w.write_record([
            b.lower_edge.to_string(),
            b.upper_edge.to_string(),
            b.count.to_string(),
            b.accuracy.to_string(),
            b.mean_confidence.to_string(),
            b.gap().to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_tau_curve(path: &Path, curve: &TauCurve) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["tau", "ece", "is_argmin"])?;
    for &(tau, ece) in &curve.points {
        let flag = if tau == curve.argmin_tau { "1" } else { "0" };
        w.write_record([tau.to_string(), ece.to_string(), flag.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Equal-width histogram of every entry of `logits`. A zero-width range is
/// widened to `[v - 0.5, v + 0.5]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn logit_histogram(logits: &Matrix, bins: usize) -> Histogram {
    let bins = bins.max(1);
    let vals = logits.as_slice();
    let (mut lo, mut hi) = vals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if vals.is_empty() {
        (lo, hi) = (0.0, 0.0);
    }
    if hi <= lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + i as f64 * width })
        .collect();
    let mut counts = vec![0usize; bins];
    for &v in vals {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Histogram { edges, counts }
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn write_logit_hist(path: &Path, h: &Histogram) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["bin_lower", "bin_upper", "count"])?;
    for (i, c) in h.counts.iter().enumerate() {
        w.write_record([h.edges[i].to_string(), h.edges[i + 1].to_string(), c.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_logits(path: &Path, logits: &Matrix, labels: &[usize]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["label".to_string()];
    header.extend((0..logits.cols()).map(|k| format!("logit_{k}")));
    w.write_record(&header)?;
    for (row, y) in logits.iter_rows().zip(labels) {
        let mut rec = vec![y.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads a file written by [`write_logits`].
pub fn read_logits(path: &Path) -> Result<(Matrix, Vec<usize>)> {
    let mut r = match csv::Reader::from_path(path) {
        Ok(r) => r,
        Err(e) => {
            if let csv::ErrorKind::Io(io) = e.kind() {
                if io.kind() == std::io::ErrorKind::NotFound {
                    return Err(CliError::MissingData(path.to_path_buf()));
                }
            }
            return Err(e.into());
        }
    };
    let headers = r.headers()?.clone();
    if headers.get(0) != Some("label") || headers.len() < 3 {
        return Err(CliError::format(path, "expected header label,logit_0,logit_1,..."));
    }
    let k = headers.len() - 1;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::format(path, e.to_string()))?;
        let bad = || CliError::format(path, format!("row {}: bad value", i + 1));
        labels.push(rec[0].trim().parse::<usize>().map_err(|_| bad())?);
        for cell in rec.iter().skip(1) {
            data.push(cell.trim().parse::<f64>().map_err(|_| bad())?);
        }
    }
    Ok((Matrix::from_vec(labels.len(), k, data)?, labels))
}
