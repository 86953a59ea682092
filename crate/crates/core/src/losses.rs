//! Softmax, the base classification losses, and the temperature-scaled
//! wrapper that also differentiates with respect to the temperature.
//!
//! Every loss consumes logits. Internally each sample works on
//! `z = g / tau`, producing `dL/dz`; the chain rule back to `g` and to `tau`
//! happens once, in [`tsl`]:
//!
//! ```text
//! dL/dg   = dL/dz / tau
//! dL/dtau = -(1 / tau) * sum_k dL/dz_k * z_k
//! ```
//!
//! Losses are means over the batch.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// Cross-entropy.
    Ce,
    /// Brier score, `sum_k (p_k - 1[y = k])^2`.
    Brier,
    /// `-(1 - p_y)^gamma log p_y`.
    Focal { gamma: f64 },
    /// Cross-entropy against `(1 - alpha) onehot + alpha / K`.
    LabelSmooth { alpha: f64 },
    /// `-(1 - p_y + p_j)^gamma log p_y`, `p_j` the largest non-target
    /// probability.
    DualFocal { gamma: f64 },
    /// Focal loss plus `lambda` times the Brier score.
    FocalCalibration { gamma: f64, lambda: f64 },
}

impl LossKind {
    pub const FOCAL_DEFAULT_GAMMA: f64 = 3.0;
    pub const LABEL_SMOOTH_DEFAULT_ALPHA: f64 = 0.05;
    pub const DUAL_FOCAL_DEFAULT_GAMMA: f64 = 2.0;

    pub fn focal() -> Self {
        LossKind::Focal {
            gamma: Self::FOCAL_DEFAULT_GAMMA,
        }
    }

    pub fn label_smooth() -> Self {
        LossKind::LabelSmooth {
            alpha: Self::LABEL_SMOOTH_DEFAULT_ALPHA,
        }
    }

    pub fn dual_focal() -> Self {
        LossKind::DualFocal {
            gamma: Self::DUAL_FOCAL_DEFAULT_GAMMA,
        }
    }

    pub fn focal_calibration() -> Self {
        LossKind::FocalCalibration {
            gamma: Self::FOCAL_DEFAULT_GAMMA,
            lambda: 1.0,
        }
    }

    /// The six losses with their default hyperparameters.
    pub fn all_defaults() -> [LossKind; 6] {
        [
            LossKind::Ce,
            LossKind::Brier,
            Self::focal(),
            Self::label_smooth(),
            Self::dual_focal(),
            Self::focal_calibration(),
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Brier => "brier",
            LossKind::Focal { .. } => "focal",
            LossKind::LabelSmooth { .. } => "label_smooth",
            LossKind::DualFocal { .. } => "dual_focal",
            LossKind::FocalCalibration { .. } => "focal_calibration",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LossKind::Ce | LossKind::Brier => true,
            LossKind::Focal { gamma } | LossKind::DualFocal { gamma } => gamma >= 0.0,
            LossKind::LabelSmooth { alpha } => (0.0..1.0).contains(&alpha),
            LossKind::FocalCalibration { gamma, lambda } => gamma >= 0.0 && lambda >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(alloc::format!(
                "invalid loss parameters: {self:?}"
            )))
        }
    }
}

/// Learnable temperature with its projection bounds and step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureState {
    pub tau: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub lr_tau: f64,
}

impl TemperatureState {
    pub fn new(tau: f64, tau_min: f64, tau_max: f64, lr_tau: f64) -> Result<Self> {
        let t = Self {
            tau,
            tau_min,
            tau_max,
            lr_tau,
        };
        t.validate()?;
        Ok(t)
    }

    /// Fixed `tau = 1`.
    pub fn unit() -> Self {
        Self {
            tau: 1.0,
            tau_min: 1.0,
            tau_max: 1.0,
            lr_tau: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_min > 0.0 && self.tau_min <= self.tau_max && self.tau_max.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!(
                "temperature bounds must satisfy 0 < tau_min <= tau_max, got [{}, {}]",
                self.tau_min,
                self.tau_max
            )));
        }
        if !(self.tau >= self.tau_min && self.tau <= self.tau_max) {
            return Err(Error::TemperatureOutOfRange {
                tau: self.tau,
                min: self.tau_min,
                max: self.tau_max,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_logits: Matrix,
    /// `dL/dtau`.
    pub grad_tau: f64,
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = libm::exp(*x - max);
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `log softmax(z)` written into `out`.
pub fn log_softmax_into(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(z.iter().map(|&x| libm::exp(x - max)).sum::<f64>());
    for (o, &x) in out.iter_mut().zip(z) {
        *o = x - lse;
    }
}

/// Elementwise `logits / tau`.
pub fn scale_logits(logits: &Matrix, tau: f64) -> Result<Matrix> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::TemperatureOutOfRange {
            tau,
            min: 0.0,
            max: f64::INFINITY,
        });
    }
    Ok(logits.map(|g| g / tau))
}

/// Mean base loss over the batch and its gradient with respect to the
/// logits (temperature fixed at 1).
pub fn base_loss(kind: LossKind, logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let out = tsl(kind, logits, labels, &TemperatureState::unit())?;
    Ok((out.value, out.grad_logits))
}

/// Temperature-scaled loss: the base loss evaluated on `softmax(g / tau)`,
/// with gradients for the logits and for `tau`.
pub fn tsl(kind: LossKind, logits: &Matrix, labels: &[usize], temp: &TemperatureState) -> Result<LossOutput> {
    temp.validate()?;
    kind.validate()?;
    if logits.rows() != labels.len() {
        return Err(Error::Dimension {
            expected: logits.rows(),
            actual: labels.len(),
            context: "labels per logit row",
        });
    }
    if logits.rows() == 0 {
        return Err(Error::Empty("loss batch"));
    }
    let k = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange { label: bad, classes: k });
    }

    let tau = temp.tau;
    let n = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), k);
    let mut scratch = Scratch::new(k);
    let mut total = 0.0;
    let mut grad_tau = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let g = logits.row(r);
        for (z, &gv) in scratch.z.iter_mut().zip(g) {
            *z = gv / tau;
        }
        let gz = grad.row_mut(r);
        total += sample_loss(kind, y, &mut scratch, gz);
        let mut dot = 0.0;
        for (d, &z) in gz.iter_mut().zip(&scratch.z) {
            dot += *d * z;
            *d /= tau * n;
        }
        grad_tau -= dot / tau;
    }
    Ok(LossOutput {
        value: total / n,
        grad_logits: grad,
        grad_tau: grad_tau / n,
    })
}

struct Scratch {
    z: Vec<f64>,
    p: Vec<f64>,
    logp: Vec<f64>,
    v: Vec<f64>,
}

impl Scratch {
    fn new(k: usize) -> Self {
        Self {
            z: vec![0.0; k],
            p: vec![0.0; k],
            logp: vec![0.0; k],
            v: vec![0.0; k],
        }
    }
}

/// Per-sample loss at scaled logits `s.z`; writes `dL/dz` into `grad`.
fn sample_loss(kind: LossKind, y: usize, s: &mut Scratch, grad: &mut [f64]) -> f64 {
    s.p.copy_from_slice(&s.z);
    softmax_in_place(&mut s.p);
    log_softmax_into(&s.z, &mut s.logp);
    let p = &s.p;
    let k = p.len();
    grad.iter_mut().for_each(|g| *g = 0.0);

    match kind {
        LossKind::Ce => {
            add_nll_grad(p, y, 1.0, grad);
            -s.logp[y]
        }
        LossKind::Brier => brier_term(p, y, 1.0, &mut s.v, grad),
        LossKind::Focal { gamma } => focal_term(p, s.logp[y], y, gamma, grad),
        LossKind::LabelSmooth { alpha } => {
            let off = alpha / k as f64;
            let mut loss = 0.0;
            for c in 0..k {
                let t = off + if c == y { 1.0 - alpha } else { 0.0 };
                loss -= t * s.logp[c];
                grad[c] = p[c] - t;
            }
            loss
        }
        LossKind::DualFocal { gamma } => {
            let nll = -s.logp[y];
            let mut j = usize::MAX;
            for c in 0..k {
                if c != y && (j == usize::MAX || p[c] > p[j]) {
                    j = c;
                }
            }
            let q: f64 = off_target_mass(p, y);
            if j == usize::MAX {
                // Single class: reduces to cross-entropy.
                add_nll_grad(p, y, 1.0, grad);
                return nll;
            }
            let base = q + p[j];
            let w = pow(base, gamma);
            add_nll_grad(p, y, w, grad);
            if gamma != 0.0 && base > 0.0 {
                // d base / dz = p_y (p - e_y) + p_j (e_j - p)
                let coef = nll * gamma * pow(base, gamma - 1.0);
                for c in 0..k {
                    let dq = p[y] * (p[c] - if c == y { 1.0 } else { 0.0 });
                    let dpj = p[j] * (if c == j { 1.0 } else { 0.0 } - p[c]);
                    grad[c] += coef * (dq + dpj);
                }
            }
            w * nll
        }
        LossKind::FocalCalibration { gamma, lambda } => {
            let f = focal_term(p, s.logp[y], y, gamma, grad);
            f + brier_term(p, y, lambda, &mut s.v, grad)
        }
    }
}

/// `1 - p_y` summed over the other classes to keep precision when `p_y ~ 1`.
fn off_target_mass(p: &[f64], y: usize) -> f64 {
    p.iter().enumerate().filter(|&(c, _)| c != y).map(|(_, &v)| v).sum()
}

#[inline]
fn pow(x: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else {
        libm::pow(x, e)
    }
}

/// `grad += w * d(-log p_y)/dz = w (p - e_y)`.
fn add_nll_grad(p: &[f64], y: usize, w: f64, grad: &mut [f64]) {
    for (c, g) in grad.iter_mut().enumerate() {
        *g += w * (p[c] - if c == y { 1.0 } else { 0.0 });
    }
}

fn focal_term(p: &[f64], logp_y: f64, y: usize, gamma: f64, grad: &mut [f64]) -> f64 {
    let nll = -logp_y;
    let q = off_target_mass(p, y);
    let w = pow(q, gamma);
    add_nll_grad(p, y, w, grad);
    if gamma != 0.0 && q > 0.0 {
        // d q / dz = p_y (p - e_y)
        let coef = nll * gamma * pow(q, gamma - 1.0) * p[y];
        for (c, g) in grad.iter_mut().enumerate() {
            *g += coef * (p[c] - if c == y { 1.0 } else { 0.0 });
        }
    }
    w * nll
}

/// `scale * sum_k (p_k - e_yk)^2`, gradient through the softmax Jacobian.
fn brier_term(p: &[f64], y: usize, scale: f64, v: &mut [f64], grad: &mut [f64]) -> f64 {
    let mut loss = 0.0;
    for c in 0..p.len() {
        let diff = p[c] - if c == y { 1.0 } else { 0.0 };
        loss += diff * diff;
        v[c] = 2.0 * scale * diff;
    }
    let pv: f64 = p.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
    for c in 0..p.len() {
        grad[c] += p[c] * (v[c] - pv);
    }
    scale * loss
}
