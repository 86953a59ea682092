//! Experiment configuration: a JSON document with `model`, `train`, `data`
//! and `eval` sections. Every field has a default, so `{}` is a valid
//! config (a KAN on the synthetic set).

use std::fs;
use std::path::{Path, PathBuf};

use kancal_core::calibration::{linspace, EvalConfig, DEFAULT_BINS};
use kancal_core::data::{self, Dataset, SplitSpec, SynthConfig};
use kancal_core::network::{Activation, Model, ModelKind, Shortcut};
use kancal_core::optim::TrainConfig;
use kancal_core::rng;
use kancal_core::spline::SplineSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};
use crate::io;

/// Environment variable naming the directory that relative data paths are
/// resolved against.
pub const DATA_DIR_ENV: &str = "KANCAL_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Hidden widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
    pub grid_size: usize,
    pub degree: usize,
    pub grid_range: [f64; 2],
    pub shortcut: Shortcut,
    /// MLP hidden activation.
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Kan,
            hidden: vec![8],
            grid_size: 5,
            degree: 3,
            grid_range: [-1.0, 1.0],
            shortcut: Shortcut::Silu,
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    pub fn spline_spec(&self) -> Result<SplineSpec> {
        Ok(SplineSpec::new(
            self.grid_range[0],
            self.grid_range[1],
            self.grid_size,
            self.degree,
        )?)
    }

    pub fn widths(&self, input: usize, classes: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(input);
        w.extend_from_slice(&self.hidden);
        w.push(classes);
        w
    }

    pub fn build(&self, input: usize, classes: usize, seed: u64) -> Result<Model> {
        let widths = self.widths(input, classes);
        let mut r = rng::stream(seed, rng::STREAM_INIT);
        Ok(match self.kind {
            ModelKind::Kan => Model::kan(&widths, self.spline_spec()?, self.shortcut, &mut r)?,
            ModelKind::Mlp => Model::mlp(&widths, self.activation, &mut r)?,
        })
    }

    /// Parameter count without allocating the model.
    pub fn param_count(&self, input: usize, classes: usize) -> usize {
        let w = self.widths(input, classes);
        w.windows(2)
            .map(|p| {
                let edges = p[0] * p[1];
                match self.kind {
                    ModelKind::Kan => {
                        let shortcut = if self.shortcut.is_active() { edges } else { 0 };
                        edges * (self.grid_size + self.degree) + edges + shortcut
                    }
                    ModelKind::Mlp => edges + p[1],
                }
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SynthConfig),
    Idx {
        /// Directory holding the four files; defaults to the data directory.
        #[serde(default)]
        dir: Option<PathBuf>,
        /// File names default to the standard MNIST names.
        #[serde(default = "mnist_train_images")]
        train_images: PathBuf,
        #[serde(default = "mnist_train_labels")]
        train_labels: PathBuf,
        #[serde(default = "mnist_test_images")]
        test_images: PathBuf,
        #[serde(default = "mnist_test_labels")]
        test_labels: PathBuf,
        /// Use only the first `limit` training images.
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    Csv {
        path: PathBuf,
        label_column: String,
    },
}

fn mnist_train_images() -> PathBuf {
    "train-images-idx3-ubyte".into()
}

fn mnist_train_labels() -> PathBuf {
    "train-labels-idx1-ubyte".into()
}

fn mnist_test_images() -> PathBuf {
    "t10k-images-idx3-ubyte".into()
}

fn mnist_test_labels() -> PathBuf {
    "t10k-labels-idx1-ubyte".into()
}

impl DataSource {
    /// MNIST file names in `dir`.
    pub fn mnist(dir: Option<PathBuf>) -> Self {
        DataSource::Idx {
            dir,
            train_images: mnist_train_images(),
            train_labels: mnist_train_labels(),
            test_images: mnist_test_images(),
            test_labels: mnist_test_labels(),
            limit: None,
            test_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Three-way split for synthetic and CSV sources.
    pub split: SplitSpec,
    /// Validation fraction carved from the IDX training file.
    pub val_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic(SynthConfig::default()),
            split: SplitSpec::default(),
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for TauGrid {
    fn default() -> Self {
        Self {
            min: 0.5,
            max: 5.0,
            points: 46,
        }
    }
}

impl TauGrid {
    pub fn values(&self) -> Vec<f64> {
        linspace(self.min, self.max, self.points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub bins: usize,
    pub smece_bandwidth: Option<f64>,
    /// ECE-versus-temperature curve on the final test logits; `null` skips it.
    pub tau_curve: Option<TauGrid>,
    pub hist_bins: usize,
    /// Fit a post-hoc temperature on the validation split after training.
    pub posthoc: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            smece_bandwidth: None,
            tau_curve: Some(TauGrid::default()),
            hist_bins: 50,
            posthoc: true,
        }
    }
}

impl EvalSection {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            bins: self.bins,
            smece_bandwidth: self.smece_bandwidth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalSection,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::Config(format!("config file {} not found", path.display())),
            _ => CliError::io(path, e),
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(CliError::Config(m));
        if self.model.hidden.contains(&0) {
            return cfg_err("hidden widths must be positive".into());
        }
        if self.model.kind == ModelKind::Kan {
            self.model.spline_spec()?;
        }
        self.train.validate()?;
        if self.eval.bins == 0 || self.eval.hist_bins == 0 {
            return cfg_err("bin counts must be positive".into());
        }
        if let Some(b) = self.eval.smece_bandwidth {
            if !(b > 0.0 && b.is_finite()) {
                return cfg_err(format!("smece bandwidth must be positive, got {b}"));
            }
        }
        if let Some(g) = self.eval.tau_curve {
            if !(g.min > 0.0 && g.min < g.max && g.max.is_finite() && g.points >= 2) {
                return cfg_err(format!("invalid tau grid {g:?}"));
            }
        }
        match &self.data.source {
            DataSource::Synthetic(_) | DataSource::Csv { .. } => self.data.split.validate()?,
            DataSource::Idx { .. } => {
                if !(self.data.val_fraction > 0.0 && self.data.val_fraction < 1.0) {
                    return cfg_err("val_fraction must be in (0, 1)".into());
                }
            }
        }
        Ok(())
    }

    /// Sets a field addressed by a dotted path such as `model.grid_size`.
    pub fn set_path(&mut self, path: &str, value: Value) -> Result<()> {
        let mut doc = serde_json::to_value(&*self)?;
        set_json_path(&mut doc, path, value)?;
        *self = serde_json::from_value(doc).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
        Ok(())
    }

    pub fn get_path(&self, path: &str) -> Option<Value> {
        let doc = serde_json::to_value(self).ok()?;
        path.split('.').try_fold(&doc, |v, k| v.get(k)).cloned()
    }
}

pub fn set_json_path(doc: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, k) in keys.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("{path}: {k:?} is not inside an object")))?;
        if i + 1 == keys.len() {
            obj.insert((*k).to_string(), value);
            return Ok(());
        }
        cur = obj.entry(*k).or_insert_with(|| Value::Object(Default::default()));
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
    }
    Err(CliError::Config("empty path".into()))
}

/// Train, validation and test sets for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl LoadedData {
    pub fn input_dim(&self) -> usize {
        self.train.feature_dim()
    }

    pub fn class_count(&self) -> usize {
        self.train
            .class_count
            .max(self.val.class_count)
            .max(self.test.class_count)
    }
}

/// Resolves `path` against `data_dir` when it is relative.
pub fn resolve(path: &Path, data_dir: Option<&Path>) -> PathBuf {
    match data_dir {
        Some(d) if path.is_relative() => d.join(path),
        _ => path.to_path_buf(),
    }
}

pub fn data_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

/// Every file the data section needs, resolved.
pub fn required_files(cfg: &DataConfig, data_dir: Option<&Path>) -> Vec<PathBuf> {
    match &cfg.source {
        DataSource::Synthetic(_) => Vec::new(),
        DataSource::Csv { path, .. } => vec![resolve(path, data_dir)],
        DataSource::Idx {
            dir,
            train_images,
            train_labels,
            test_images,
            test_labels,
            ..
        } => {
            let base = dir.as_ref().map(|d| resolve(d, data_dir));
            let base = base.as_deref().or(data_dir);
            [train_images, train_labels, test_images, test_labels]
                .iter()
                .map(|p| resolve(p, base))
                .collect()
        }
    }
}

/// Fails with [`CliError::MissingData`] if any input file is absent.
pub fn check_data_present(cfg: &DataConfig, data_dir: Option<&Path>) -> Result<()> {
    for p in required_files(cfg, data_dir) {
        if !p.is_file() {
            return Err(CliError::MissingData(p));
        }
    }
    Ok(())
}

pub fn load_data(cfg: &DataConfig, grid: (f64, f64), data_dir: Option<&Path>) -> Result<LoadedData> {
    check_data_present(cfg, data_dir)?;
    match &cfg.source {
        DataSource::Synthetic(s) => {
            let mut ds = data::synth_classification(s)?;
            data::normalize_into_range(&mut ds.features, grid);
            let (train, val, test) = data::split(&ds, &cfg.split)?;
            Ok(LoadedData { train, val, test })
        }
        DataSource::Csv { path, label_column } => {
            let ds = io::load_csv(&resolve(path, data_dir), label_column, grid)?;
            let (train, val, test) = data::split(&ds, &cfg.split)?;
            Ok(LoadedData { train, val, test })
        }
        DataSource::Idx { limit, test_limit, .. } => {
            let files = required_files(cfg, data_dir);
            let full = io::load_idx(&files[0], &files[1], grid, *limit)?;
            let mut test = io::load_idx(&files[2], &files[3], grid, *test_limit)?;
            let (mut train, mut val) = data::split_holdout(&full, cfg.val_fraction, cfg.split.seed)?;
            let k = train.class_count.max(test.class_count);
            for d in [&mut train, &mut val, &mut test] {
                d.class_count = k;
            }
            Ok(LoadedData { train, val, test })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        let c = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"modle": {}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"model": {"grid": 3}}"#).is_err());
    }

    #[test]
    fn dotted_paths() {
        let mut c = ExperimentConfig::default();
        c.set_path("model.grid_size", Value::from(10)).unwrap();
        c.set_path("train.loss", serde_json::json!({"kind": "focal", "gamma": 2.0}))
            .unwrap();
        c.set_path("train.lr_tau", Value::from(0.01)).unwrap();
        assert_eq!(c.model.grid_size, 10);
        assert_eq!(c.train.lr_tau, Some(0.01));
        assert_eq!(c.get_path("model.grid_size"), Some(Value::from(10)));
        assert!(c.set_path("model.nonexistent", Value::from(1)).is_err());
        assert!(c.set_path("model.grid_size", Value::from("x")).is_err());
    }

    #[test]
    fn param_count_matches_built_model() {
        for kind in [ModelKind::Kan, ModelKind::Mlp] {
            for shortcut in [Shortcut::None, Shortcut::Silu] {
                let m = ModelConfig {
                    kind,
                    shortcut,
                    hidden: vec![6, 4],
                    ..Default::default()
                };
                assert_eq!(m.param_count(7, 3), m.build(7, 3, 0).unwrap().param_count());
            }
        }
    }

    #[test]
    fn validation_catches_bad_sections() {
        let mut c = ExperimentConfig::default();
        c.model.grid_range = [1.0, -1.0];
        assert!(matches!(c.validate(), Err(e) if e.exit_code() == 2));
        let mut c = ExperimentConfig::default();
        c.train.tau0 = 50.0;
        assert!(matches!(c.validate(), Err(e) if e.exit_code() == 2));
        let mut c = ExperimentConfig::default();
        c.eval.bins = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn synthetic_data_is_mapped_into_the_grid() {
        let d = load_data(&DataConfig::default(), (-1.0, 1.0), None).unwrap();
        assert_eq!((d.train.len(), d.val.len(), d.test.len()), (400, 50, 50));
        assert_eq!(d.input_dim(), 20);
        assert_eq!(d.class_count(), 3);
    }

    #[test]
    fn relative_paths_use_the_data_dir() {
        let cfg = DataConfig {
            source: DataSource::mnist(None),
            ..Default::default()
        };
        let files = required_files(&cfg, Some(Path::new("/data")));
        assert_eq!(files[0], Path::new("/data/train-images-idx3-ubyte"));
        assert!(matches!(
            check_data_present(&cfg, Some(Path::new("/nonexistent"))),
            Err(CliError::MissingData(_))
        ));
    }
}
