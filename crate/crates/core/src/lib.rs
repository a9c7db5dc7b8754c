//! Identification of a target module in a linear dynamic network when one
//! predictor node signal is not measured.

pub mod baselines;
pub mod error;
pub mod gibbs;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod mcem;
pub mod network;
pub mod optim;
pub mod presets;
pub mod regression;
pub mod rng;
pub mod simulate;
pub mod tf;

pub use error::{Error, Result};
