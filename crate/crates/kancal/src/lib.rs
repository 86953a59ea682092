//! File formats, the experiment runner and the sweep harness around
//! `kancal-core`. The `kancal` binary is a thin shell over [`cli`].

pub mod artifacts;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod run;
pub mod sweep;

pub use error::{CliError, Result};
