//! Dataset loaders: IDX (the MNIST container format) and headed CSV.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use kancal_core::data::{affine_map, normalize_into_range, Dataset};
use kancal_core::Matrix;

use crate::error::{CliError, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CliError::MissingData(path.to_path_buf())),
        Err(e) => Err(CliError::io(path, e)),
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses an IDX image file into `(count, rows * cols, pixels / 255)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let magic = be_u32(bytes, 0).ok_or_else(|| CliError::format(path, "truncated header"))?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(CliError::format(path, format!("bad image magic {magic:#010x}")));
    }
    let dims: Vec<usize> = (0..3)
        .map(|i| be_u32(bytes, 4 + 4 * i).map(|v| v as usize))
        .collect::<Option<_>>()
        .ok_or_else(|| CliError::format(path, "truncated header"))?;
    let (n, d) = (dims[0], dims[1] * dims[2]);
    let payload = &bytes[16..];
    if payload.len() != n * d {
        return Err(CliError::format(
            path,
            format!("expected {} pixel bytes, found {}", n * d, payload.len()),
        ));
    }
    Ok((n, d, payload.iter().map(|&b| b as f64 / 255.0).collect()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0).ok_or_else(|| CliError::format(path, "truncated header"))?;
    if magic != IDX_LABELS_MAGIC {
        return Err(CliError::format(path, format!("bad label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4).ok_or_else(|| CliError::format(path, "truncated header"))? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(CliError::format(
            path,
            format!("expected {n} label bytes, found {}", payload.len()),
        ));
    }
    Ok(payload.iter().map(|&b| b as usize).collect())
}

/// Loads an IDX image/label pair. Pixels are scaled to `[0, 1]` and then
/// mapped affinely onto `grid`. The class count is `max label + 1`.
pub fn load_idx(images: &Path, labels: &Path, grid: (f64, f64), limit: Option<usize>) -> Result<Dataset> {
    let img_bytes = read_file(images)?;
    let lbl_bytes = read_file(labels)?;
    let (n, d, mut pixels) = parse_idx_images(&img_bytes, images)?;
    let mut y = parse_idx_labels(&lbl_bytes, labels)?;
    if y.len() != n {
        return Err(CliError::format(labels, format!("{} labels for {n} images", y.len())));
    }
    let keep = limit.map_or(n, |l| l.min(n));
    pixels.truncate(keep * d);
    y.truncate(keep);
    let mut features = Matrix::from_vec(keep, d, pixels)?;
    affine_map(&mut features, (0.0, 1.0), grid);
    let classes = y.iter().max().map_or(0, |m| m + 1);
    let name = images
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Ok(Dataset::new(name, features, y, classes)?)
}

/// Encodes an IDX image file; used to build fixtures.
pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len() * rows * cols);
    for v in [IDX_IMAGES_MAGIC, pixels.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for p in pixels {
        out.extend_from_slice(p);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Raw CSV contents before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub feature_names: Vec<String>,
    pub features: Matrix,
    pub labels: Vec<usize>,
    /// Label strings in class-index order.
    pub vocabulary: Vec<String>,
}

/// Reads a headed CSV. `label_column` names the label; every other column
/// must be numeric. Labels are numbered in order of first appearance.
pub fn read_csv_table(path: &Path, label_column: &str) -> Result<CsvTable> {
    let bytes = read_file(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes.as_slice());
    let headers = rdr.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| CliError::format(path, format!("no column named {label_column:?}")))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.trim().to_string())
        .collect();
    let width = headers.len();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut vocab: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::format(path, e.to_string()))?;
        if rec.len() != width {
            return Err(CliError::format(
                path,
                format!("row {} has {} fields, header has {width}", line + 1, rec.len()),
            ));
        }
        for (i, cell) in rec.iter().enumerate() {
            let cell = cell.trim();
            if i == label_idx {
                let next = vocab.len();
                let id = *index.entry(cell.to_string()).or_insert_with(|| {
                    vocab.push(cell.to_string());
                    next
                });
                labels.push(id);
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| CliError::format(path, format!("row {}: non-numeric value {cell:?}", line + 1)))?;
                if !v.is_finite() {
                    return Err(CliError::format(path, format!("row {}: non-finite value", line + 1)));
                }
                values.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(CliError::format(path, "no data rows"));
    }
    if vocab.len() < 2 {
        return Err(CliError::format(path, "label column has a single class"));
    }
    let features = Matrix::from_vec(labels.len(), feature_names.len(), values)?;
    Ok(CsvTable {
        feature_names,
        features,
        labels,
        vocabulary: vocab,
    })
}

/// [`read_csv_table`] followed by z-scoring and mapping into `grid`.
pub fn load_csv(path: &Path, label_column: &str, grid: (f64, f64)) -> Result<Dataset> {
    let t = read_csv_table(path, label_column)?;
    let mut features = t.features;
    normalize_into_range(&mut features, grid);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    Ok(Dataset::new(name, features, t.labels, t.vocabulary.len())?)
}
