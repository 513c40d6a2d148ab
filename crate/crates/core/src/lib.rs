#![cfg_attr(not(feature = "std"), no_std)]
extern crate alloc;

pub mod autodiff;
pub mod error;
pub mod grid;
pub mod kan;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
