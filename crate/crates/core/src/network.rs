//! KAN and MLP layers with hand-written forward and backward passes.
//!
//! A KAN layer maps `x in R^n_in` to `y in R^n_out` with one learnable
//! univariate function per edge:
//!
//! ```text
//! y_i = sum_j  w_spline[i,j] * spline_ij(clamp(x_j)) + w_base[i,j] * shortcut(x_j)
//! ```
//!
//! All edges of a layer share one [`SplineSpec`], so the basis values of an
//! input coordinate are computed once per sample and reused by every output.
//! Parameters are exposed as flat tensors in a fixed order (see
//! [`Model::tensors`]); gradients and optimizer state mirror that order.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::spline::{build_knots, KnotVector, SplineSpec};
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shortcut {
    None,
    Identity,
    Silu,
}

impl Shortcut {
    #[inline]
    fn eval(self, x: f64) -> (f64, f64) {
        match self {
            Shortcut::None => (0.0, 0.0),
            Shortcut::Identity => (x, 1.0),
            Shortcut::Silu => {
                let s = sigmoid(x);
                (x * s, s * (1.0 + x * (1.0 - s)))
            }
        }
    }

    #[inline]
    pub fn is_active(self) -> bool {
        self != Shortcut::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Gelu,
    None,
}

impl Activation {
    /// Value and derivative.
    #[inline]
    fn eval(self, x: f64) -> (f64, f64) {
        match self {
            Activation::None => (x, 1.0),
            Activation::Relu => {
                if x > 0.0 {
                    (x, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Activation::Gelu => {
                // Exact form x * Phi(x).
                let cdf = 0.5 * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2));
                let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI);
                (x * cdf, cdf + x * pdf)
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// One KAN layer. Tensors are row-major: `coeffs[(i * in_dim + j) * B + k]`
/// is coefficient `k` of the edge from input `j` to output `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct KanLayer {
    in_dim: usize,
    out_dim: usize,
    spec: SplineSpec,
    knots: KnotVector,
    shortcut: Shortcut,
    pub coeffs: Vec<f64>,
    pub w_spline: Vec<f64>,
    pub w_base: Vec<f64>,
}

/// Values retained by [`KanLayer::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct KanCache {
    batch: usize,
    /// First active basis index per `(b, j)`.
    starts: Vec<u32>,
    /// `d + 1` basis values per `(b, j)`.
    values: Vec<f64>,
    /// `d + 1` basis derivatives per `(b, j)`, zeroed for clamped inputs.
    derivs: Vec<f64>,
    /// Shortcut value and derivative per `(b, j)`.
    base: Vec<(f64, f64)>,
}

impl KanLayer {
    /// Zero-initialized layer; use [`KanLayer::init`] for random weights.
    pub fn zeros(in_dim: usize, out_dim: usize, spec: SplineSpec, shortcut: Shortcut) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        let knots = build_knots(&spec)?;
        let nb = spec.num_basis();
        let edges = in_dim * out_dim;
        Ok(Self {
            in_dim,
            out_dim,
            spec,
            knots,
            shortcut,
            coeffs: vec![0.0; edges * nb],
            w_spline: vec![0.0; edges],
            w_base: vec![0.0; edges],
        })
    }

    /// Coefficients i.i.d. normal with std `0.1 / sqrt(G + d)`, `w_spline = 1`,
    /// `w_base = 1` when the shortcut is active (0 otherwise).
    pub fn init<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        spec: SplineSpec,
        shortcut: Shortcut,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layer = Self::zeros(in_dim, out_dim, spec, shortcut)?;
        let std = 0.1 / libm::sqrt(spec.num_basis() as f64);
        let normal = Normal::new(0.0, std).expect("positive std");
        for c in &mut layer.coeffs {
            *c = normal.sample(rng);
        }
        layer.w_spline.iter_mut().for_each(|w| *w = 1.0);
        if shortcut.is_active() {
            layer.w_base.iter_mut().for_each(|w| *w = 1.0);
        }
        Ok(layer)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn spec(&self) -> &SplineSpec {
        &self.spec
    }

    pub fn shortcut(&self) -> Shortcut {
        self.shortcut
    }

    /// Active parameters: spline coefficients, `w_spline`, and `w_base` only
    /// when a shortcut is in use.
    pub fn param_count(&self) -> usize {
        let edges = self.in_dim * self.out_dim;
        let base = if self.shortcut.is_active() { edges } else { 0 };
        self.coeffs.len() + edges + base
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, KanCache)> {
        check_cols(x, self.in_dim, "kan layer input")?;
        let batch = x.rows();
        let d1 = self.spec.degree + 1;
        let nb = self.spec.num_basis();
        let cells = batch * self.in_dim;
        let mut cache = KanCache {
            batch,
            starts: vec![0; cells],
            values: vec![0.0; cells * d1],
            derivs: vec![0.0; cells * d1],
            base: vec![(0.0, 0.0); cells],
        };

        for b in 0..batch {
            for (j, &xv) in x.row(b).iter().enumerate() {
                let cell = b * self.in_dim + j;
                let vals = &mut cache.values[cell * d1..(cell + 1) * d1];
                let ders = &mut cache.derivs[cell * d1..(cell + 1) * d1];
                let start = self.knots.local_basis(xv, vals, Some(ders));
                if !self.spec.contains(xv) {
                    ders.iter_mut().for_each(|v| *v = 0.0);
                }
                cache.starts[cell] = start as u32;
                cache.base[cell] = self.shortcut.eval(xv);
            }
        }

        let mut y = Matrix::zeros(batch, self.out_dim);
        for b in 0..batch {
            let out = y.row_mut(b);
            for (i, yi) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for j in 0..self.in_dim {
                    let cell = b * self.in_dim + j;
                    let edge = i * self.in_dim + j;
                    let start = cache.starts[cell] as usize;
                    let c = &self.coeffs[edge * nb + start..edge * nb + start + d1];
                    let v = &cache.values[cell * d1..(cell + 1) * d1];
                    let s: f64 = c.iter().zip(v).map(|(c, v)| c * v).sum();
                    acc += self.w_spline[edge] * s + self.w_base[edge] * cache.base[cell].0;
                }
                *yi = acc;
            }
        }
        Ok((y, cache))
    }

    /// Gradients of `sum(dy * y)`; returns `dx` and accumulates parameter
    /// gradients into `grads` (ordered as [`KanLayer::tensors`]).
    pub fn backward(&self, cache: &KanCache, dy: &Matrix, grads: &mut [Vec<f64>]) -> Result<Matrix> {
        if dy.rows() != cache.batch || cache.starts.len() != cache.batch * self.in_dim {
            return Err(Error::Dimension {
                expected: cache.batch,
                actual: dy.rows(),
                context: "kan backward batch (stale cache?)",
            });
        }
        check_cols(dy, self.out_dim, "kan layer output gradient")?;
        let d1 = self.spec.degree + 1;
        let nb = self.spec.num_basis();
        let [g_coeffs, g_spline, g_base] = grads else {
            return Err(Error::Dimension {
                expected: 3,
                actual: grads.len(),
                context: "kan gradient tensors",
            });
        };
        let mut dx = Matrix::zeros(cache.batch, self.in_dim);
        for b in 0..cache.batch {
            let dyr = dy.row(b);
            for (i, &g) in dyr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for j in 0..self.in_dim {
                    let cell = b * self.in_dim + j;
                    let edge = i * self.in_dim + j;
                    let start = cache.starts[cell] as usize;
                    let off = edge * nb + start;
                    let c = &self.coeffs[off..off + d1];
                    let v = &cache.values[cell * d1..(cell + 1) * d1];
                    let dv = &cache.derivs[cell * d1..(cell + 1) * d1];
                    let mut s = 0.0;
                    let mut ds = 0.0;
                    for r in 0..d1 {
                        s += c[r] * v[r];
                        ds += c[r] * dv[r];
                    }
                    let ws = self.w_spline[edge];
                    let (base, dbase) = cache.base[cell];
                    let gc = &mut g_coeffs[off..off + d1];
                    for r in 0..d1 {
                        gc[r] += g * ws * v[r];
                    }
                    g_spline[edge] += g * s;
                    if self.shortcut.is_active() {
                        g_base[edge] += g * base;
                    }
                    dx[(b, j)] += g * (ws * ds + self.w_base[edge] * dbase);
                }
            }
        }
        Ok(dx)
    }

    pub fn tensors(&self) -> [&[f64]; 3] {
        [&self.coeffs, &self.w_spline, &self.w_base]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 3] {
        [&mut self.coeffs, &mut self.w_spline, &mut self.w_base]
    }
}

/// Fully connected layer `act(W x + b)` with `W` stored `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Matrix,
    /// Activation derivative at each pre-activation.
    act_grad: Matrix,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            activation,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        })
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Result<Self> {
        let mut layer = Self::zeros(in_dim, out_dim, activation)?;
        let bound = 1.0 / libm::sqrt(in_dim as f64);
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
            *w = dist.sample(rng);
        }
        Ok(layer)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, DenseCache)> {
        check_cols(x, self.in_dim, "dense layer input")?;
        let mut y = Matrix::zeros(x.rows(), self.out_dim);
        let mut act_grad = Matrix::zeros(x.rows(), self.out_dim);
        for b in 0..x.rows() {
            let xr = x.row(b);
            for i in 0..self.out_dim {
                let w = &self.weight[i * self.in_dim..(i + 1) * self.in_dim];
                let z: f64 = self.bias[i] + w.iter().zip(xr).map(|(w, x)| w * x).sum::<f64>();
                let (a, da) = self.activation.eval(z);
                y[(b, i)] = a;
                act_grad[(b, i)] = da;
            }
        }
        Ok((
            y,
            DenseCache {
                input: x.clone(),
                act_grad,
            },
        ))
    }

    pub fn backward(&self, cache: &DenseCache, dy: &Matrix, grads: &mut [Vec<f64>]) -> Result<Matrix> {
        if dy.rows() != cache.input.rows() {
            return Err(Error::Dimension {
                expected: cache.input.rows(),
                actual: dy.rows(),
                context: "dense backward batch (stale cache?)",
            });
        }
        check_cols(dy, self.out_dim, "dense layer output gradient")?;
        let [g_w, g_b] = grads else {
            return Err(Error::Dimension {
                expected: 2,
                actual: grads.len(),
                context: "dense gradient tensors",
            });
        };
        let mut dx = Matrix::zeros(dy.rows(), self.in_dim);
        for b in 0..dy.rows() {
            let xr = cache.input.row(b);
            for i in 0..self.out_dim {
                let dz = dy[(b, i)] * cache.act_grad[(b, i)];
                if dz == 0.0 {
                    continue;
                }
                g_b[i] += dz;
                let w = &self.weight[i * self.in_dim..(i + 1) * self.in_dim];
                let gw = &mut g_w[i * self.in_dim..(i + 1) * self.in_dim];
                let dxr = dx.row_mut(b);
                for j in 0..self.in_dim {
                    gw[j] += dz * xr[j];
                    dxr[j] += dz * w[j];
                }
            }
        }
        Ok(dx)
    }

    pub fn tensors(&self) -> [&[f64]; 2] {
        [&self.weight, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Kan(KanLayer),
    Dense(DenseLayer),
}

#[derive(Debug, Clone)]
pub enum LayerCache {
    Kan(KanCache),
    Dense(DenseCache),
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        match self {
            Layer::Kan(l) => l.in_dim(),
            Layer::Dense(l) => l.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Kan(l) => l.out_dim(),
            Layer::Dense(l) => l.out_dim(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Kan(l) => l.param_count(),
            Layer::Dense(l) => l.param_count(),
        }
    }

    fn tensor_count(&self) -> usize {
        match self {
            Layer::Kan(_) => 3,
            Layer::Dense(_) => 2,
        }
    }

    pub fn arch(&self) -> LayerArch {
        match self {
            Layer::Kan(l) => LayerArch::Kan {
                in_dim: l.in_dim,
                out_dim: l.out_dim,
                spec: l.spec,
                shortcut: l.shortcut,
            },
            Layer::Dense(l) => LayerArch::Dense {
                in_dim: l.in_dim,
                out_dim: l.out_dim,
                activation: l.activation,
            },
        }
    }
}

/// Shape-only description of a layer, used to rebuild models from
/// checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerArch {
    Kan {
        in_dim: usize,
        out_dim: usize,
        spec: SplineSpec,
        shortcut: Shortcut,
    },
    Dense {
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Kan,
    Mlp,
}

/// Per-tensor gradients, in the order of [`Model::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub tensors: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|&g| g == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    kind: ModelKind,
    layers: Vec<Layer>,
}

impl Model {
    /// Checks adjacent widths and returns the assembled model.
    pub fn new(kind: ModelKind, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("model needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::Dimension {
                    expected: w[0].out_dim(),
                    actual: w[1].in_dim(),
                    context: "adjacent layer widths",
                });
            }
        }
        Ok(Self { kind, layers })
    }

    /// KAN with layer widths `widths = [d_in, h_1, ..., K]`, one spline spec
    /// shared by every layer.
    pub fn kan<R: Rng + ?Sized>(widths: &[usize], spec: SplineSpec, shortcut: Shortcut, rng: &mut R) -> Result<Self> {
        check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| KanLayer::init(w[0], w[1], spec, shortcut, rng).map(Layer::Kan))
            .collect::<Result<Vec<_>>>()?;
        Self::new(ModelKind::Kan, layers)
    }

    /// MLP with `activation` on hidden layers and a linear output layer.
    pub fn mlp<R: Rng + ?Sized>(widths: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        check_widths(widths)?;
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let act = if l + 1 == n { Activation::None } else { activation };
                DenseLayer::init(w[0], w[1], act, rng).map(Layer::Dense)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(ModelKind::Mlp, layers)
    }

    /// Zero-parameter model with the given architecture.
    pub fn from_arch(kind: ModelKind, arch: &[LayerArch]) -> Result<Self> {
        let layers = arch
            .iter()
            .map(|a| match *a {
                LayerArch::Kan {
                    in_dim,
                    out_dim,
                    spec,
                    shortcut,
                } => KanLayer::zeros(in_dim, out_dim, spec, shortcut).map(Layer::Kan),
                LayerArch::Dense {
                    in_dim,
                    out_dim,
                    activation,
                } => DenseLayer::zeros(in_dim, out_dim, activation).map(Layer::Dense),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(kind, layers)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn arch(&self) -> Vec<LayerArch> {
        self.layers.iter().map(Layer::arch).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn class_count(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Number of active trainable parameters.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// All parameter tensors: per KAN layer `coeffs, w_spline, w_base`; per
    /// dense layer `weight, bias`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Kan(k) => out.extend(k.tensors()),
                Layer::Dense(d) => out.extend(d.tensors()),
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Kan(k) => out.extend(k.tensors_mut()),
                Layer::Dense(d) => out.extend(d.tensors_mut()),
            }
        }
        out
    }

    pub fn zero_grads(&self) -> GradientSet {
        GradientSet {
            tensors: self.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, Vec<LayerCache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h: Option<Matrix> = None;
        for layer in &self.layers {
            let input = h.as_ref().unwrap_or(x);
            let (out, cache) = match layer {
                Layer::Kan(l) => {
                    let (y, c) = l.forward(input)?;
                    (y, LayerCache::Kan(c))
                }
                Layer::Dense(l) => {
                    let (y, c) = l.forward(input)?;
                    (y, LayerCache::Dense(c))
                }
            };
            caches.push(cache);
            h = Some(out);
        }
        let logits = h.expect("at least one layer");
        Ok((logits, caches))
    }

    /// Logits without keeping caches, evaluated in chunks of rows.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        const CHUNK: usize = 256;
        let k = self.class_count();
        let mut out = Vec::with_capacity(x.rows() * k);
        let idx: Vec<usize> = (0..x.rows()).collect();
        for chunk in idx.chunks(CHUNK) {
            let part = x.select_rows(chunk);
            let (logits, _) = self.forward(&part)?;
            out.extend_from_slice(logits.as_slice());
        }
        Matrix::from_vec(x.rows(), k, out)
    }

    pub fn backward(&self, caches: &[LayerCache], d_logits: &Matrix) -> Result<GradientSet> {
        Ok(self.backward_with_input(caches, d_logits)?.0)
    }

    /// Parameter gradients plus the gradient with respect to the model input.
    pub fn backward_with_input(&self, caches: &[LayerCache], d_logits: &Matrix) -> Result<(GradientSet, Matrix)> {
        if caches.len() != self.layers.len() {
            return Err(Error::Dimension {
                expected: self.layers.len(),
                actual: caches.len(),
                context: "forward caches",
            });
        }
        let mut grads = self.zero_grads();
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut o = 0;
        for l in &self.layers {
            offsets.push(o);
            o += l.tensor_count();
        }
        let mut dy = d_logits.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let g = &mut grads.tensors[offsets[l]..offsets[l] + layer.tensor_count()];
            dy = match (layer, &caches[l]) {
                (Layer::Kan(k), LayerCache::Kan(c)) => k.backward(c, &dy, g)?,
                (Layer::Dense(d), LayerCache::Dense(c)) => d.backward(c, &dy, g)?,
                _ => return Err(Error::InvalidConfig("cache does not match layer kind".into())),
            };
        }
        Ok((grads, dy))
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::InvalidConfig("widths must list input and output sizes".into()));
    }
    if widths.contains(&0) {
        return Err(Error::InvalidConfig("layer widths must be positive".into()));
    }
    Ok(())
}

fn check_cols(m: &Matrix, expected: usize, context: &'static str) -> Result<()> {
    if m.cols() != expected {
        return Err(Error::Dimension {
            expected,
            actual: m.cols(),
            context,
        });
    }
    Ok(())
}
