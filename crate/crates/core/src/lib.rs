//! Multi-robot tracking of a stochastic target from latency-affected
//! detections.

pub mod consensus;
pub mod core_math;
pub mod control;
pub mod error;
pub mod estimator;
pub mod fusion;
pub mod harness;
pub mod jets;
pub mod matrix;
pub mod perception;
pub mod rng;
pub mod target;

pub use error::{Error, Result};
pub use matrix::Matrix;
