//! Uniform B-splines: knot construction, Cox-de Boor basis values, their
//! derivatives and univariate spline evaluation.
//!
//! A [`SplineSpec`] with `G` grid intervals and degree `d` owns a uniform knot
//! vector extended `d` steps past each end of `[grid_min, grid_max]`. That
//! gives `G + 2d + 1` knots and `G + d` basis functions which sum to one
//! everywhere on the grid range. Inputs outside the range are clamped before
//! evaluation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest supported degree; keeps the per-evaluation scratch on the stack.
pub const MAX_DEGREE: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    pub grid_min: f64,
    pub grid_max: f64,
    /// Number of grid intervals `G`.
    pub grid_size: usize,
    /// Polynomial degree `d`; the spline order is `d + 1`.
    pub degree: usize,
}

impl SplineSpec {
    pub fn new(grid_min: f64, grid_max: f64, grid_size: usize, degree: usize) -> Result<Self> {
        let spec = Self {
            grid_min,
            grid_max,
            grid_size,
            degree,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grid_min.is_finite() && self.grid_max.is_finite()) {
            return Err(Error::InvalidSpline(format!(
                "grid range [{}, {}] is not finite",
                self.grid_min, self.grid_max
            )));
        }
        if self.grid_min >= self.grid_max {
            return Err(Error::InvalidSpline(format!(
                "grid_min {} must be below grid_max {}",
                self.grid_min, self.grid_max
            )));
        }
        if self.grid_size == 0 {
            return Err(Error::InvalidSpline("grid_size must be at least 1".into()));
        }
        if self.degree == 0 || self.degree > MAX_DEGREE {
            return Err(Error::InvalidSpline(format!(
                "degree must be in 1..={MAX_DEGREE}, got {}",
                self.degree
            )));
        }
        Ok(())
    }

    /// Number of basis functions, `G + d`.
    #[inline]
    pub fn num_basis(&self) -> usize {
        self.grid_size + self.degree
    }

    #[inline]
    pub fn step(&self) -> f64 {
        (self.grid_max - self.grid_min) / self.grid_size as f64
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        x >= self.grid_min && x <= self.grid_max
    }

    #[inline]
    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.grid_min, self.grid_max)
    }
}

/// Nondecreasing knot sequence together with the degree it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
}

impl KnotVector {
    /// Wraps an arbitrary knot sequence. Needs at least `2d + 2` knots so
    /// that one interval carries a full set of `d + 1` basis functions.
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self> {
        if degree == 0 || degree > MAX_DEGREE {
            return Err(Error::InvalidSpline(format!(
                "degree must be in 1..={MAX_DEGREE}, got {degree}"
            )));
        }
        if knots.len() < 2 * degree + 2 {
            return Err(Error::InvalidSpline(format!(
                "{} knots cannot support degree {}",
                knots.len(),
                degree
            )));
        }
        if knots.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::InvalidSpline("knots must be nondecreasing".into()));
        }
        if knots[degree] >= knots[knots.len() - 1 - degree] {
            return Err(Error::InvalidSpline("empty evaluation range".into()));
        }
        Ok(Self { knots, degree })
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.knots
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.knots.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    #[inline]
    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Range on which the basis is a partition of unity.
    #[inline]
    pub fn domain(&self) -> (f64, f64) {
        (self.knots[self.degree], self.knots[self.knots.len() - 1 - self.degree])
    }

    /// Index `i` of the knot span `[t_i, t_{i+1})` holding `x`, restricted to
    /// the domain spans. `x` is expected to be clamped already.
    fn span(&self, x: f64) -> usize {
        let d = self.degree;
        let last = self.knots.len() - 2 - d;
        // Binary search over the domain spans; the right end belongs to the
        // last span.
        let (mut lo, mut hi) = (d, last);
        if x >= self.knots[last] {
            return last;
        }
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if self.knots[mid] <= x {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    /// Nonzero basis values at `x` (clamped to the domain).
    ///
    /// Writes the `d + 1` values into `values` and, when given, their
    /// derivatives into `derivs`. Returns the index of the first basis
    /// function they belong to.
    pub fn local_basis(&self, x: f64, values: &mut [f64], derivs: Option<&mut [f64]>) -> usize {
        let d = self.degree;
        debug_assert!(values.len() > d);
        let (lo, hi) = self.domain();
        let x = x.clamp(lo, hi);
        let i = self.span(x);
        let t = &self.knots;

        // Triangular Cox-de Boor scheme on the single active span.
        let mut left = [0.0; MAX_DEGREE + 1];
        let mut right = [0.0; MAX_DEGREE + 1];
        let mut lower = [0.0; MAX_DEGREE];
        values[0] = 1.0;
        for j in 1..=d {
            if j == d {
                lower[..d].copy_from_slice(&values[..d]);
            }
            left[j] = x - t[i + 1 - j];
            right[j] = t[i + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = values[r] / (right[r + 1] + left[j - r]);
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }

        let start = i - d;
        if let Some(derivs) = derivs {
            // B'_{k,d} = d (B_{k,d-1} / (t_{k+d} - t_k) - B_{k+1,d-1} / (t_{k+d+1} - t_{k+1}))
            // `lower` holds B_{i-d+1..=i, d-1}.
            let df = d as f64;
            for r in 0..=d {
                let k = start + r;
                let a = if r >= 1 { lower[r - 1] / (t[k + d] - t[k]) } else { 0.0 };
                let b = if r < d {
                    lower[r] / (t[k + d + 1] - t[k + 1])
                } else {
                    0.0
                };
                derivs[r] = df * (a - b);
            }
        }
        start
    }
}

/// Uniform knots with spacing `(grid_max - grid_min) / G`, extended `d` steps
/// beyond each end of the grid.
pub fn build_knots(spec: &SplineSpec) -> Result<KnotVector> {
    spec.validate()?;
    let h = spec.step();
    let d = spec.degree as f64;
    let n = spec.grid_size + 2 * spec.degree + 1;
    let knots = (0..n).map(|i| spec.grid_min + (i as f64 - d) * h).collect();
    KnotVector::new(knots, spec.degree)
}

/// All `G + d` basis values at `x`; at most `d + 1` of them are nonzero.
pub fn basis_eval(knots: &KnotVector, x: f64) -> Vec<f64> {
    let d = knots.degree();
    let mut out = vec![0.0; knots.num_basis()];
    let mut local = vec![0.0; d + 1];
    let start = knots.local_basis(x, &mut local, None);
    out[start..=start + d].copy_from_slice(&local);
    out
}

/// Derivatives of all basis functions at `x` (clamped like [`basis_eval`]).
pub fn basis_grad(knots: &KnotVector, x: f64) -> Vec<f64> {
    let d = knots.degree();
    let mut out = vec![0.0; knots.num_basis()];
    let mut local = vec![0.0; d + 1];
    let mut der = vec![0.0; d + 1];
    let start = knots.local_basis(x, &mut local, Some(&mut der));
    out[start..=start + d].copy_from_slice(&der);
    out
}

/// `sum_k coeffs[k] * B_k(x)`.
pub fn spline_eval(coeffs: &[f64], knots: &KnotVector, x: f64) -> Result<f64> {
    if coeffs.len() != knots.num_basis() {
        return Err(Error::Dimension {
            expected: knots.num_basis(),
            actual: coeffs.len(),
            context: "spline coefficients",
        });
    }
    let d = knots.degree();
    let mut local = [0.0; MAX_DEGREE + 1];
    let start = knots.local_basis(x, &mut local, None);
    Ok(local[..=d]
        .iter()
        .zip(&coeffs[start..=start + d])
        .map(|(b, c)| b * c)
        .sum())
}
