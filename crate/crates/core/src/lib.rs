//! Kolmogorov-Arnold networks with B-spline edge functions, trained with
//! temperature-scaled losses, plus the calibration metrics used to judge them.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs or owns its state explicitly; file formats, the
//! experiment runner and the CLI live in the companion `kancal` crate.
//!
//! Module map:
//!
//! - [`spline`]: knot vectors, Cox-de Boor basis values and derivatives.
//! - [`network`]: KAN and MLP layers with manual forward/backward passes.
//! - [`losses`]: softmax, six base losses and the temperature-scaled wrapper.
//! - [`optim`]: Adam, temperature projection and the joint training loop.
//! - [`calibration`]: ECE family, smooth ECE, post-hoc temperature fitting.
//! - [`data`]: in-memory datasets, the synthetic generator and splitting.
#![cfg_attr(not(feature = "std"), no_std)]
// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod calibration;
pub mod data;
pub mod error;
pub mod losses;
pub mod matrix;
pub mod network;
pub mod optim;
pub mod rng;
pub mod spline;

pub use error::{Error, Result};
pub use matrix::Matrix;
