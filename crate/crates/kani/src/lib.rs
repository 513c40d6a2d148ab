//! Files, datasets, experiments and the command line around `kani-core`.

pub mod cli;
pub mod config;
pub mod dataset;
mod error;
pub mod experiments;
pub mod io;

pub use error::{Error, Result};
