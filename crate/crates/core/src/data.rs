//! In-memory datasets, feature normalization, the Gaussian-cluster
//! synthetic generator, and seeded splitting.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Matrix, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Dimension {
                expected: features.rows(),
                actual: labels.len(),
                context: "labels per feature row",
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: class_count,
            });
        }
        if !features.is_finite() {
            return Err(Error::InvalidData("non-finite feature values".into()));
        }
        Ok(Self {
            features,
            labels,
            class_count,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            name: self.name.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.class_count];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }

    pub fn distinct_classes(&self) -> usize {
        self.class_counts().iter().filter(|&&c| c > 0).count()
    }
}

/// Standard deviations below this are treated as zero.
pub const STD_FLOOR: f64 = 1e-12;
/// Z-scores in `[-Z_SPAN, Z_SPAN]` map onto the grid range.
pub const Z_SPAN: f64 = 3.0;

/// Per-column z-scoring. Constant columns become all zeros.
pub fn zscore_columns(m: &mut Matrix) {
    let (n, d) = (m.rows(), m.cols());
    if n == 0 {
        return;
    }
    for j in 0..d {
        let mean = (0..n).map(|i| m[(i, j)]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|i| {
                let d = m[(i, j)] - mean;
                d * d
            })
            .sum::<f64>()
            / n as f64;
        let std = libm::sqrt(var);
        for i in 0..n {
            m[(i, j)] = if std < STD_FLOOR { 0.0 } else { (m[(i, j)] - mean) / std };
        }
    }
}

/// Affine map sending `[from_lo, from_hi]` onto `[to_lo, to_hi]`. Values
/// outside the source range are mapped, not clipped.
pub fn affine_map(m: &mut Matrix, from: (f64, f64), to: (f64, f64)) {
    let scale = (to.1 - to.0) / (from.1 - from.0);
    for v in m.as_mut_slice() {
        *v = to.0 + (*v - from.0) * scale;
    }
}

/// Z-score every feature, then map `[-3, 3]` standard deviations onto the
/// model's grid range.
pub fn normalize_into_range(m: &mut Matrix, grid: (f64, f64)) {
    zscore_columns(m);
    affine_map(m, (-Z_SPAN, Z_SPAN), grid);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub dim: usize,
    pub classes: usize,
    /// Distance of each cluster centre from the origin.
    pub separation: f64,
    /// Class priors; `None` means (0.5, 0.3, 0.2) for three classes and
    /// uniform otherwise.
    pub priors: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 500,
            dim: 20,
            classes: 3,
            separation: 2.0,
            priors: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn resolved_priors(&self) -> Vec<f64> {
        match &self.priors {
            Some(p) => p.clone(),
            None if self.classes == 3 => vec![0.5, 0.3, 0.2],
            None => vec![1.0 / self.classes as f64; self.classes],
        }
    }
}

/// Exact class counts for the priors: floors first, remaining samples to the
/// largest fractional parts (ties to the lower class index).
pub fn class_counts_for(n: usize, priors: &[f64]) -> Vec<usize> {
    let total: f64 = priors.iter().sum();
    let raw: Vec<f64> = priors.iter().map(|p| p / total * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| libm::floor(*r) as usize).collect();
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..priors.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - libm::floor(raw[a]);
        let fb = raw[b] - libm::floor(raw[b]);
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[c] += 1;
        rest -= 1;
    }
    counts
}

/// Gaussian class clusters: `K` random unit directions scaled by
/// `separation`, unit isotropic noise, exact class counts from the priors.
/// Samples are returned in shuffled order; features are raw (not
/// normalized).
pub fn synth_classification(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.classes < 2 {
        return Err(Error::InvalidConfig("need at least 2 classes".into()));
    }
    if cfg.n < cfg.classes {
        return Err(Error::InvalidConfig(format!(
            "n = {} smaller than class count {}",
            cfg.n, cfg.classes
        )));
    }
    if cfg.dim == 0 {
        return Err(Error::InvalidConfig("feature dimension must be positive".into()));
    }
    let priors = cfg.resolved_priors();
    if priors.len() != cfg.classes || priors.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::InvalidConfig("priors must be positive, one per class".into()));
    }
    let mut r = rng::stream(cfg.seed, rng::STREAM_SYNTH);
    let mut centers = Vec::with_capacity(cfg.classes);
    for _ in 0..cfg.classes {
        let mut c: Vec<f64> = (0..cfg.dim).map(|_| StandardNormal.sample(&mut r)).collect();
        let norm = libm::sqrt(c.iter().map(|v| v * v).sum::<f64>()).max(f64::MIN_POSITIVE);
        c.iter_mut().for_each(|v| *v *= cfg.separation / norm);
        centers.push(c);
    }
    let counts = class_counts_for(cfg.n, &priors);
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| core::iter::repeat_n(c, k))
        .collect();
    labels.shuffle(&mut r);
    let mut features = Vec::with_capacity(cfg.n * cfg.dim);
    for &y in &labels {
        for &c in &centers[y] {
            let noise: f64 = StandardNormal.sample(&mut r);
            features.push(c + noise);
        }
    }
    Dataset::new(
        "synthetic",
        Matrix::from_vec(cfg.n, cfg.dim, features)?,
        labels,
        cfg.classes,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|&x| !(x > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split fractions must be positive and sum to 1, got {f:?}"
            )));
        }
        Ok(())
    }

    /// Part sizes: rounded train and val, remainder to test.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let tr = libm::round(self.train * n as f64) as usize;
        let va = (libm::round(self.val * n as f64) as usize).min(n - tr.min(n));
        let tr = tr.min(n);
        [tr, va, n - tr - va]
    }
}

/// Seeded, class-stratified split into `(train, val, test)`.
///
/// Samples are permuted, grouped by class (keeping the permuted order inside
/// each class), and dealt to the three parts following an evenly spread
/// pattern with exactly the requested part sizes. Each part therefore gets
/// every class in close to global proportion.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let sizes = spec.sizes(ds.len());
    let mut parts = stratified_parts(ds, &sizes, spec.seed, &["train", "val", "test"])?;
    let test = parts.pop().expect("three parts");
    let val = parts.pop().expect("three parts");
    let train = parts.pop().expect("three parts");
    Ok((train, val, test))
}

/// Stratified two-way split: `(rest, holdout)` with `round(frac * N)`
/// samples held out.
pub fn split_holdout(ds: &Dataset, frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "holdout fraction must be in (0, 1), got {frac}"
        )));
    }
    let n = ds.len();
    let hold = (libm::round(frac * n as f64) as usize).min(n);
    let mut parts = stratified_parts(ds, &[n - hold, hold], seed, &["train", "val"])?;
    let holdout = parts.pop().expect("two parts");
    let rest = parts.pop().expect("two parts");
    Ok((rest, holdout))
}

fn stratified_parts(ds: &Dataset, sizes: &[usize], seed: u64, names: &[&str]) -> Result<Vec<Dataset>> {
    let n = ds.len();
    let mut r = rng::stream(seed, rng::STREAM_SPLIT);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut r);
    let mut grouped = perm.clone();
    grouped.sort_by_key(|&i| ds.labels[i]);

    // Bresenham-style pattern: at every position pick the part furthest
    // behind its pro-rata quota.
    let mut assigned = vec![0usize; sizes.len()];
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); sizes.len()];
    for (pos, &i) in grouped.iter().enumerate() {
        let mut best = usize::MAX;
        let mut best_deficit = f64::NEG_INFINITY;
        for (p, &size) in sizes.iter().enumerate() {
            if assigned[p] >= size {
                continue;
            }
            let quota = size as f64 * (pos + 1) as f64 / n as f64;
            let deficit = quota - assigned[p] as f64;
            if deficit > best_deficit {
                best_deficit = deficit;
                best = p;
            }
        }
        assigned[best] += 1;
        parts[best].push(i);
    }
    // Restore the permuted order within each part.
    let mut rank = vec![0usize; n];
    for (k, &i) in perm.iter().enumerate() {
        rank[i] = k;
    }
    let mut out = Vec::with_capacity(sizes.len());
    for (p, idx) in parts.iter_mut().enumerate() {
        idx.sort_by_key(|&i| rank[i]);
        let part = ds.subset(idx);
        if part.is_empty() {
            return Err(Error::InvalidData(format!("{} split is empty", names[p])));
        }
        if part.distinct_classes() < 2 {
            return Err(Error::InvalidData(format!(
                "{} split has fewer than 2 classes",
                names[p]
            )));
        }
        out.push(part);
    }
    Ok(out)
}

/// Shuffled row indices for one epoch, keyed on `(seed, epoch)`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut r = rng::stream(seed, rng::STREAM_SHUFFLE_BASE + epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut r);
    idx
}

/// Uniform draw helper used by tests and tools that need a seeded matrix.
pub fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, lo: f64, hi: f64, r: &mut R) -> Matrix {
    let data = (0..rows * cols).map(|_| r.random_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}
