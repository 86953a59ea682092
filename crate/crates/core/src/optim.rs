//! Adam, temperature projection, and the joint `(theta, tau)` training loop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::calibration::{evaluate, CalibrationReport, EvalConfig, EvalSet};
use crate::data::{epoch_permutation, Dataset};
use crate::losses::{tsl, LossKind, TemperatureState};
use crate::network::Model;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zeroed moments shaped like `shapes`.
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_model(model: &Model) -> Self {
        let shapes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
        Self::new(&shapes)
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension {
                expected: self.m.len(),
                actual: params.len().min(grads.len()),
                context: "adam tensor count",
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::Dimension {
                    expected: self.m[i].len(),
                    actual: if p.len() != self.m[i].len() { p.len() } else { g.len() },
                    context: "adam tensor length",
                });
            }
        }
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= lr * mh / (libm::sqrt(vh) + self.eps);
            }
        }
        Ok(())
    }
}

pub fn project_tau(tau: f64, tau_min: f64, tau_max: f64) -> f64 {
    if tau.is_nan() {
        return tau_min;
    }
    tau.clamp(tau_min, tau_max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_after_decay: f64,
    /// Epochs after this one (1-based) use `lr_after_decay`.
    pub decay_epoch: usize,
    /// Step size for `tau`; `None` follows the scheduled `lr`.
    pub lr_tau: Option<f64>,
    pub tau0: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub tsl_enabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 128,
            lr: 1e-3,
            lr_after_decay: 1e-4,
            decay_epoch: 10,
            lr_tau: None,
            tau0: 1.0,
            tau_min: 0.05,
            tau_max: 10.0,
            seed: 0,
            loss: LossKind::Ce,
            tsl_enabled: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite() && self.lr_after_decay >= 0.0 && self.lr_after_decay.is_finite()) {
            return bad("learning rates must be finite and non-negative");
        }
        if let Some(l) = self.lr_tau {
            if !(l >= 0.0 && l.is_finite()) {
                return bad("lr_tau must be finite and non-negative");
            }
        }
        if !(self.tau_min > 0.0 && self.tau_min <= self.tau0 && self.tau0 <= self.tau_max && self.tau_max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < tau_min <= tau0 <= tau_max, got {} <= {} <= {}",
                self.tau_min, self.tau0, self.tau_max
            )));
        }
        self.loss.validate()
    }

    /// Model learning rate for a 1-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch > self.decay_epoch {
            self.lr_after_decay
        } else {
            self.lr
        }
    }

    pub fn lr_tau_at(&self, epoch: usize) -> f64 {
        self.lr_tau.unwrap_or_else(|| self.lr_at(epoch))
    }

    /// Starting temperature: `tau0` with TSL, otherwise 1.
    pub fn initial_tau(&self) -> f64 {
        if self.tsl_enabled {
            self.tau0
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub tau: f64,
    pub report: CalibrationReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn best_accuracy(&self) -> Option<f64> {
        self.records.iter().map(|r| r.test_accuracy).reduce(f64::max)
    }

    pub fn min_ece(&self) -> Option<f64> {
        self.records.iter().map(|r| r.report.ece).reduce(f64::min)
    }
}

/// Per-step information passed to a training observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub grad_tau: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub tau: f64,
    pub history: TrainHistory,
}

pub fn train(
    model: &mut Model,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
) -> Result<TrainOutcome> {
    train_with_observer(model, train_set, test_set, cfg, eval_cfg, |_| {})
}

/// Minibatch training. Each step evaluates the loss on `softmax(g / tau)`,
/// applies Adam to the model parameters, then takes a plain gradient step
/// on `tau` followed by projection into `[tau_min, tau_max]`. With TSL off,
/// `tau` stays at 1. Each epoch is evaluated on `test_set` (or on the
/// training set if none is given) at the current temperature.
pub fn train_with_observer(
    model: &mut Model,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
    mut observer: impl FnMut(&StepInfo),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if let Some(t) = test_set {
        if t.is_empty() {
            return Err(Error::Empty("test set"));
        }
    }
    for ds in core::iter::once(train_set).chain(test_set) {
        if ds.feature_dim() != model.input_dim() {
            return Err(Error::Dimension {
                expected: model.input_dim(),
                actual: ds.feature_dim(),
                context: "feature dimension",
            });
        }
        if ds.class_count > model.class_count() {
            return Err(Error::Dimension {
                expected: model.class_count(),
                actual: ds.class_count,
                context: "class count",
            });
        }
    }

    let (tau_min, tau_max) = if cfg.tsl_enabled {
        (cfg.tau_min, cfg.tau_max)
    } else {
        (1.0, 1.0)
    };
    let mut temp = TemperatureState {
        tau: cfg.initial_tau(),
        tau_min,
        tau_max,
        lr_tau: 0.0,
    };
    let mut adam = AdamState::for_model(model);
    let mut history = TrainHistory::default();
    let n = train_set.len();

    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        temp.lr_tau = cfg.lr_tau_at(epoch);
        let order = epoch_permutation(n, cfg.seed, epoch - 1);
        let mut loss_sum = 0.0;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = train_set.features.select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let (logits, caches) = model.forward(&x)?;
            let out = tsl(cfg.loss, &logits, &y, &temp)?;
            if !out.value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: out.value,
                });
            }
            let grads = model.backward(&caches, &out.grad_logits)?;
            {
                let mut params = model.tensors_mut();
                adam.step(&mut params, &grads.tensors, lr)?;
            }
            if cfg.tsl_enabled {
                temp.tau = project_tau(temp.tau - temp.lr_tau * out.grad_tau, tau_min, tau_max);
            }
            loss_sum += out.value * idx.len() as f64;
            observer(&StepInfo {
                epoch,
                step,
                loss: out.value,
                grad_tau: if cfg.tsl_enabled { out.grad_tau } else { 0.0 },
                tau: temp.tau,
            });
        }
        let eval_on = test_set.unwrap_or(train_set);
        let logits = model.predict(&eval_on.features)?;
        if !logits.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step: usize::MAX,
                loss: f64::NAN,
            });
        }
        let eval = EvalSet::from_logits(&logits, eval_on.labels.clone(), temp.tau)?;
        let report = evaluate(&eval, eval_cfg)?;
        history.records.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / n as f64,
            test_accuracy: report.accuracy,
            tau: temp.tau,
            report,
        });
    }
    Ok(TrainOutcome { tau: temp.tau, history })
}
