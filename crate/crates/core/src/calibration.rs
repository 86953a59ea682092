//! Calibration metrics and temperature fitting.
//!
//! Binned metrics use the top-label confidence `max_k p_k` and half-open bins
//! `(c_{m-1}, c_m]`; confidence 0 falls in the first bin. Adaptive bins sort
//! the confidences and cut them into `M` groups whose sizes differ by at most
//! one.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::losses::{log_softmax_into, softmax};
use crate::matrix::argmax;
use crate::{Error, Matrix, Result};

/// Default number of equal-width bins.
pub const DEFAULT_BINS: usize = 15;
/// Probability floor used by [`nll`].
pub const NLL_FLOOR: f64 = 1e-12;
/// Temperature search range shared by the fitting routines.
pub const TAU_SEARCH_MIN: f64 = 0.05;
pub const TAU_SEARCH_MAX: f64 = 10.0;
/// Grid resolution used by [`smece`].
pub const SMECE_GRID: usize = 512;

/// Probabilities and labels to be scored.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    probs: Matrix,
    labels: Vec<usize>,
}

impl EvalSet {
    /// Rows of `probs` must lie on the simplex (within 1e-9).
    pub fn new(probs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if probs.rows() != labels.len() {
            return Err(Error::Dimension {
                expected: probs.rows(),
                actual: labels.len(),
                context: "labels per probability row",
            });
        }
        if probs.rows() == 0 {
            return Err(Error::Empty("evaluation set"));
        }
        let k = probs.cols();
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::LabelOutOfRange { label: bad, classes: k });
        }
        for r in probs.iter_rows() {
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > 1e-9 || r.iter().any(|&p| !(p >= -1e-12)) {
                return Err(Error::InvalidData("probability row not on the simplex".into()));
            }
        }
        Ok(Self { probs, labels })
    }

    /// `softmax(logits / tau)`.
    pub fn from_logits(logits: &Matrix, labels: Vec<usize>, tau: f64) -> Result<Self> {
        let scaled = crate::losses::scale_logits(logits, tau)?;
        Self::new(softmax(&scaled), labels)
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.probs.cols()
    }

    /// Top-label confidence and correctness per sample.
    pub fn top_label(&self) -> (Vec<f64>, Vec<bool>) {
        let mut conf = Vec::with_capacity(self.len());
        let mut correct = Vec::with_capacity(self.len());
        for (r, &y) in self.probs.iter_rows().zip(&self.labels) {
            let k = argmax(r);
            conf.push(r[k]);
            correct.push(k == y);
        }
        (conf, correct)
    }

    pub fn accuracy(&self) -> f64 {
        let (_, correct) = self.top_label();
        correct.iter().filter(|&&c| c).count() as f64 / self.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinScheme {
    EqualWidth,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub count: usize,
    pub accuracy: f64,
    pub mean_confidence: f64,
    pub lower_edge: f64,
    pub upper_edge: f64,
}

impl Bin {
    pub fn gap(&self) -> f64 {
        (self.accuracy - self.mean_confidence).abs()
    }
}

/// Reliability-diagram statistics. Empty bins are kept with zero count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub scheme: BinScheme,
    pub bins: Vec<Bin>,
    pub total: usize,
}

impl BinStats {
    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    pub fn occupied(&self) -> impl Iterator<Item = &Bin> {
        self.bins.iter().filter(|b| b.count > 0)
    }
}

/// Bin `m` of `M` equal-width bins holding `c`, i.e. `m/M < c <= (m+1)/M`.
/// Edges are computed as `m / M` so membership agrees exactly with a direct
/// comparison against those edges.
pub fn equal_width_bin(c: f64, bins: usize) -> usize {
    let mf = bins as f64;
    let edge = |m: usize| m as f64 / mf;
    let mut m = libm::ceil(c * mf) as isize - 1;
    m = m.clamp(0, bins as isize - 1);
    let mut m = m as usize;
    while m > 0 && c <= edge(m) {
        m -= 1;
    }
    while m + 1 < bins && c > edge(m + 1) {
        m += 1;
    }
    m
}

/// Equal-width binning of arbitrary `(confidence, hit)` pairs.
fn equal_width_stats(conf: &[f64], hit: &[bool], m: usize) -> Vec<Bin> {
    let mut count = vec![0usize; m];
    let mut acc = vec![0.0; m];
    let mut sum_conf = vec![0.0; m];
    for (&c, &h) in conf.iter().zip(hit) {
        let b = equal_width_bin(c, m);
        count[b] += 1;
        sum_conf[b] += c;
        if h {
            acc[b] += 1.0;
        }
    }
    (0..m)
        .map(|b| {
            let n = count[b];
            let (a, c) = if n > 0 {
                (acc[b] / n as f64, sum_conf[b] / n as f64)
            } else {
                (0.0, 0.0)
            };
            Bin {
                count: n,
                accuracy: a,
                mean_confidence: c,
                lower_edge: b as f64 / m as f64,
                upper_edge: (b + 1) as f64 / m as f64,
            }
        })
        .collect()
}

fn adaptive_stats(conf: &[f64], hit: &[bool], m: usize) -> Vec<Bin> {
    let n = conf.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| conf[a].total_cmp(&conf[b]).then(a.cmp(&b)));
    (0..m)
        .map(|b| {
            let lo = b * n / m;
            let hi = (b + 1) * n / m;
            let members = &order[lo..hi];
            let cnt = members.len();
            if cnt == 0 {
                return Bin {
                    count: 0,
                    accuracy: 0.0,
                    mean_confidence: 0.0,
                    lower_edge: 0.0,
                    upper_edge: 0.0,
                };
            }
            let hits = members.iter().filter(|&&i| hit[i]).count();
            let sc: f64 = members.iter().map(|&i| conf[i]).sum();
            Bin {
                count: cnt,
                accuracy: hits as f64 / cnt as f64,
                mean_confidence: sc / cnt as f64,
                lower_edge: conf[members[0]],
                upper_edge: conf[members[cnt - 1]],
            }
        })
        .collect()
}

pub fn bin_stats(eval: &EvalSet, bins: usize, scheme: BinScheme) -> Result<BinStats> {
    if bins == 0 {
        return Err(Error::InvalidConfig("bin count must be at least 1".into()));
    }
    let (conf, hit) = eval.top_label();
    let bins = match scheme {
        BinScheme::EqualWidth => equal_width_stats(&conf, &hit, bins),
        BinScheme::Adaptive => adaptive_stats(&conf, &hit, bins),
    };
    Ok(BinStats {
        scheme,
        bins,
        total: eval.len(),
    })
}

/// `sum_m |B_m|/N |acc_m - conf_m|`.
pub fn ece(stats: &BinStats) -> f64 {
    let n = stats.total as f64;
    stats.occupied().map(|b| b.count as f64 / n * b.gap()).sum()
}

/// Largest gap over occupied bins.
pub fn mce(stats: &BinStats) -> f64 {
    stats.occupied().map(Bin::gap).fold(0.0, f64::max)
}

/// Unweighted mean gap over `M` equal-mass bins.
pub fn ada_ece(eval: &EvalSet, bins: usize) -> Result<f64> {
    if eval.len() < bins {
        return Err(Error::InvalidConfig(alloc::format!(
            "adaptive ECE needs at least {bins} samples, got {}",
            eval.len()
        )));
    }
    let stats = bin_stats(eval, bins, BinScheme::Adaptive)?;
    Ok(stats.bins.iter().map(Bin::gap).sum::<f64>() / bins as f64)
}

/// Class-wise ECE: every class probability is binned on its own, with
/// "accuracy" the fraction of bin members whose label is that class; the
/// mass-weighted gaps are averaged over classes.
pub fn classwise_ece(eval: &EvalSet, bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::InvalidConfig("bin count must be at least 1".into()));
    }
    let k = eval.class_count();
    let n = eval.len() as f64;
    let mut total = 0.0;
    let mut conf = Vec::with_capacity(eval.len());
    let mut hit = Vec::with_capacity(eval.len());
    for c in 0..k {
        conf.clear();
        hit.clear();
        for (r, &y) in eval.probs().iter_rows().zip(eval.labels()) {
            conf.push(r[c]);
            hit.push(y == c);
        }
        total += equal_width_stats(&conf, &hit, bins)
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| b.count as f64 / n * b.gap())
            .sum::<f64>();
    }
    Ok(total / k as f64)
}

/// `-(1/N) sum log max(p_y, 1e-12)`.
pub fn nll(eval: &EvalSet) -> f64 {
    let s: f64 = eval
        .probs()
        .iter_rows()
        .zip(eval.labels())
        .map(|(r, &y)| -libm::log(r[y].max(NLL_FLOOR)))
        .sum();
    s / eval.len() as f64
}

/// `(1/N) sum_i sum_k (p_ik - 1[y_i = k])^2`.
pub fn brier(eval: &EvalSet) -> f64 {
    let s: f64 = eval
        .probs()
        .iter_rows()
        .zip(eval.labels())
        .map(|(r, &y)| {
            r.iter()
                .enumerate()
                .map(|(k, &p)| {
                    let d = p - if k == y { 1.0 } else { 0.0 };
                    d * d
                })
                .sum::<f64>()
        })
        .sum();
    s / eval.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothEce {
    pub value: f64,
    pub bandwidth: f64,
}

/// Kernel-smoothed calibration error.
///
/// Residuals `hit_i - conf_i` are smoothed with a Gaussian kernel reflected
/// at 0 and 1, and the absolute smoothed residual is integrated over a
/// 512-point grid on `[0, 1]`. This equals `int |acc(u) - conf(u)| w(u) du`
/// with `w` the kernel density of the confidences. Samples are first
/// deposited onto the grid by linear interpolation.
///
/// With `bandwidth = None` the bandwidth solves `smECE_sigma = sigma` by
/// bisection on `[1/N, 1]`.
pub fn smece(eval: &EvalSet, bandwidth: Option<f64>) -> Result<SmoothEce> {
    let n = eval.len();
    if n < 2 {
        return Err(Error::InvalidData("smooth ECE needs at least 2 samples".into()));
    }
    let (conf, hit) = eval.top_label();
    if conf.iter().all(|&c| c == conf[0]) {
        let acc = hit.iter().filter(|&&h| h).count() as f64 / n as f64;
        return Ok(SmoothEce {
            value: (acc - conf[0]).abs(),
            bandwidth: bandwidth.unwrap_or(0.0),
        });
    }
    let grid = SmoothGrid::new(&conf, &hit);
    if let Some(sigma) = bandwidth {
        if !(sigma > 0.0) {
            return Err(Error::InvalidConfig("smooth ECE bandwidth must be positive".into()));
        }
        return Ok(SmoothEce {
            value: grid.value(sigma),
            bandwidth: sigma,
        });
    }
    let mut lo = 1.0 / n as f64;
    let mut hi = 1.0;
    let f_lo = grid.value(lo);
    if f_lo <= lo {
        return Ok(SmoothEce {
            value: f_lo,
            bandwidth: lo,
        });
    }
    if grid.value(hi) >= hi {
        return Ok(SmoothEce {
            value: grid.value(hi),
            bandwidth: hi,
        });
    }
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if grid.value(mid) > mid {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sigma = 0.5 * (lo + hi);
    Ok(SmoothEce {
        value: grid.value(sigma),
        bandwidth: sigma,
    })
}

struct SmoothGrid {
    /// Residual mass deposited on each grid point, divided by N.
    residual: Vec<f64>,
}

impl SmoothGrid {
    fn new(conf: &[f64], hit: &[bool]) -> Self {
        let g = SMECE_GRID;
        let mut residual = vec![0.0; g];
        let n = conf.len() as f64;
        for (&c, &h) in conf.iter().zip(hit) {
            let r = (if h { 1.0 } else { 0.0 }) - c;
            let pos = c.clamp(0.0, 1.0) * (g - 1) as f64;
            let i = (libm::floor(pos) as usize).min(g - 2);
            let w = pos - i as f64;
            residual[i] += (1.0 - w) * r / n;
            residual[i + 1] += w * r / n;
        }
        Self { residual }
    }

    fn value(&self, sigma: f64) -> f64 {
        let g = SMECE_GRID;
        let span = (g - 1) as isize;
        let step = 1.0 / span as f64;
        // Every kernel distance is an integer number of grid steps, so the
        // Gaussian is tabulated once per bandwidth.
        let reach = 5 * span;
        let norm = 1.0 / (sigma * libm::sqrt(2.0 * core::f64::consts::PI));
        let table: Vec<f64> = (-reach..=reach)
            .map(|m| {
                let z = m as f64 * step / sigma;
                norm * libm::exp(-0.5 * z * z)
            })
            .collect();
        let phi = |m: isize| -> f64 {
            if m.abs() > reach {
                0.0
            } else {
                table[(m + reach) as usize]
            }
        };

        let mut smoothed = vec![0.0; g];
        let mut column = vec![0.0; g];
        for (i, &r) in self.residual.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            let i = i as isize;
            // Images of the point at i reflected about 0 and 1.
            let mut mass = 0.0;
            for (t, c) in column.iter_mut().enumerate() {
                let t = t as isize;
                let mut v = 0.0;
                for shift in -2isize..=2 {
                    let base = 2 * shift * span;
                    v += phi(t - i - base) + phi(t + i - base);
                }
                *c = v;
                let w = if t == 0 || t == span { 0.5 } else { 1.0 };
                mass += w * v * step;
            }
            let scale = r / mass;
            for (s, c) in smoothed.iter_mut().zip(&column) {
                *s += scale * c;
            }
        }
        // Trapezoid rule over the grid.
        let total: f64 = smoothed
            .iter()
            .enumerate()
            .map(|(t, s)| {
                let w = if t == 0 || t == g - 1 { 0.5 } else { 1.0 };
                w * s.abs() * step
            })
            .sum();
        total.min(1.0)
    }
}

/// All metrics for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub accuracy: f64,
    pub ece: f64,
    pub ada_ece: f64,
    pub classwise_ece: f64,
    pub mce: f64,
    pub smece: f64,
    pub nll: f64,
    pub brier: f64,
    pub bins: usize,
    pub smece_bandwidth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub bins: usize,
    /// Fixed smooth-ECE bandwidth; `None` selects the fixed-point bandwidth.
    pub smece_bandwidth: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            smece_bandwidth: None,
        }
    }
}

/// Full metric suite. Adaptive ECE uses `min(M, N)` bins.
pub fn evaluate(eval: &EvalSet, cfg: &EvalConfig) -> Result<CalibrationReport> {
    let stats = bin_stats(eval, cfg.bins, BinScheme::EqualWidth)?;
    let sm = if eval.len() >= 2 {
        smece(eval, cfg.smece_bandwidth)?
    } else {
        let (conf, hit) = eval.top_label();
        SmoothEce {
            value: ((hit[0] as u8 as f64) - conf[0]).abs(),
            bandwidth: 0.0,
        }
    };
    Ok(CalibrationReport {
        accuracy: eval.accuracy(),
        ece: ece(&stats),
        ada_ece: ada_ece(eval, cfg.bins.min(eval.len()))?,
        classwise_ece: classwise_ece(eval, cfg.bins)?,
        mce: mce(&stats),
        smece: sm.value,
        nll: nll(eval),
        brier: brier(eval),
        bins: cfg.bins,
        smece_bandwidth: sm.bandwidth,
    })
}

/// Mean NLL of `softmax(logits / t)` without any probability floor.
pub fn nll_at_temperature(logits: &Matrix, labels: &[usize], t: f64) -> f64 {
    let mut z = vec![0.0; logits.cols()];
    let mut lp = vec![0.0; logits.cols()];
    let mut s = 0.0;
    for (r, &y) in logits.iter_rows().zip(labels) {
        for (zi, &g) in z.iter_mut().zip(r) {
            *zi = g / t;
        }
        log_softmax_into(&z, &mut lp);
        s -= lp[y];
    }
    s / labels.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosthocFit {
    pub temperature: f64,
    pub nll_before: f64,
    pub nll_after: f64,
    /// Labels contained a single class; the fit fell back to `T = 1`.
    pub degenerate: bool,
}

/// Post-hoc temperature: minimizes validation NLL of `softmax(g / T)` over
/// `T in [0.05, 10]` by golden-section search to `|dT| < 1e-4`.
pub fn fit_posthoc_temperature(logits: &Matrix, labels: &[usize]) -> Result<PosthocFit> {
    if logits.rows() != labels.len() {
        return Err(Error::Dimension {
            expected: logits.rows(),
            actual: labels.len(),
            context: "labels per logit row",
        });
    }
    if labels.len() < 2 {
        return Err(Error::InvalidData(
            "temperature fitting needs at least 2 samples".into(),
        ));
    }
    if !logits.is_finite() {
        return Err(Error::InvalidData("non-finite logits".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.cols()) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: logits.cols(),
        });
    }
    let nll_before = nll_at_temperature(logits, labels, 1.0);
    if labels.iter().all(|&y| y == labels[0]) {
        return Ok(PosthocFit {
            temperature: 1.0,
            nll_before,
            nll_after: nll_before,
            degenerate: true,
        });
    }
    let f = |t: f64| nll_at_temperature(logits, labels, t);
    let t = golden_section(f, TAU_SEARCH_MIN, TAU_SEARCH_MAX, 1e-4);
    let nll_t = f(t);
    let (temperature, nll_after) = if nll_t <= nll_before {
        (t, nll_t)
    } else {
        (1.0, nll_before)
    };
    Ok(PosthocFit {
        temperature,
        nll_before,
        nll_after,
        degenerate: false,
    })
}

/// Minimizer of a unimodal `f` on `[a, b]`, bracket shrunk below `tol`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (libm::sqrt(5.0) - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    // The endpoints are candidates too when the minimum sits on the boundary.
    [mid, a, b]
        .into_iter()
        .min_by(|x, y| f(*x).total_cmp(&f(*y)))
        .expect("non-empty")
}

/// Mean top-label confidence of the given rows under temperature `tau`.
pub fn mean_confidence(logits: &Matrix, rows: &[usize], tau: f64) -> f64 {
    let mut z = vec![0.0; logits.cols()];
    let mut s = 0.0;
    for &r in rows {
        for (zi, &g) in z.iter_mut().zip(logits.row(r)) {
            *zi = g / tau;
        }
        crate::losses::softmax_in_place(&mut z);
        s += z.iter().copied().fold(0.0, f64::max);
    }
    s / rows.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinTemperature {
    pub bin: usize,
    pub count: usize,
    pub accuracy: f64,
    pub conf_before: f64,
    pub conf_after: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerBinTauResult {
    pub bins: Vec<BinTemperature>,
    pub ece_before: f64,
    pub ece_after: f64,
}

/// For each occupied equal-width bin (membership fixed by the unscaled
/// confidences) finds the temperature whose mean confidence best matches
/// the bin accuracy. Mean confidence decreases monotonically in `tau`, so
/// the root is bracketed and found by bisection on `[0.05, 10]`. A bin never
/// ends up with a larger gap than at `tau = 1`.
pub fn per_bin_tau_oracle(logits: &Matrix, labels: &[usize], bins: usize) -> Result<PerBinTauResult> {
    let eval = EvalSet::from_logits(logits, labels.to_vec(), 1.0)?;
    if bins == 0 {
        return Err(Error::InvalidConfig("bin count must be at least 1".into()));
    }
    let (conf, hit) = eval.top_label();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for (i, &c) in conf.iter().enumerate() {
        members[equal_width_bin(c, bins)].push(i);
    }
    let n = labels.len() as f64;
    let mut out = Vec::new();
    let mut ece_before = 0.0;
    let mut ece_after = 0.0;
    for (b, rows) in members.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let acc = rows.iter().filter(|&&i| hit[i]).count() as f64 / rows.len() as f64;
        let before = mean_confidence(logits, rows, 1.0);
        let gap_before = (acc - before).abs();
        let mut tau = 1.0;
        let mut after = before;
        if gap_before > 0.0 {
            let cand = bisect_temperature(|t| mean_confidence(logits, rows, t), acc);
            let c = mean_confidence(logits, rows, cand);
            if (acc - c).abs() < gap_before {
                tau = cand;
                after = c;
            }
        }
        let w = rows.len() as f64 / n;
        ece_before += w * gap_before;
        ece_after += w * (acc - after).abs();
        out.push(BinTemperature {
            bin: b,
            count: rows.len(),
            accuracy: acc,
            conf_before: before,
            conf_after: after,
            tau,
        });
    }
    Ok(PerBinTauResult {
        bins: out,
        ece_before,
        ece_after,
    })
}

/// `tau` in the search range with `conf(tau)` closest to `target`, for
/// `conf` decreasing in `tau`.
fn bisect_temperature(conf: impl Fn(f64) -> f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (TAU_SEARCH_MIN, TAU_SEARCH_MAX);
    if conf(lo) <= target {
        return lo;
    }
    if conf(hi) >= target {
        return hi;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if conf(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let (cl, ch) = (conf(lo), conf(hi));
    if (cl - target).abs() <= (ch - target).abs() {
        lo
    } else {
        hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauCurve {
    pub points: Vec<(f64, f64)>,
    pub argmin_tau: f64,
    pub min_ece: f64,
}

/// ECE of `softmax(g / tau)` for every `tau` on the grid.
pub fn tau_sweep(logits: &Matrix, labels: &[usize], taus: &[f64], bins: usize) -> Result<TauCurve> {
    if taus.is_empty() {
        return Err(Error::Empty("temperature grid"));
    }
    if taus.iter().any(|&t| !(t > 0.0)) || taus.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "temperature grid must be positive and ascending".into(),
        ));
    }
    let mut points = Vec::with_capacity(taus.len());
    for &t in taus {
        let eval = EvalSet::from_logits(logits, labels.to_vec(), t)?;
        points.push((t, ece(&bin_stats(&eval, bins, BinScheme::EqualWidth)?)));
    }
    let (argmin_tau, min_ece) =
        points
            .iter()
            .copied()
            .fold((taus[0], f64::INFINITY), |best, p| if p.1 < best.1 { p } else { best });
    Ok(TauCurve {
        points,
        argmin_tau,
        min_ece,
    })
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}
