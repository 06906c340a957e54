//! Simulation and verification toolkit for Bayesian generalised linear inverse problems.

pub mod bounds;
pub mod cli;
pub mod error;
pub mod forward;
pub mod harness;
pub mod linalg;
pub mod noise;
pub mod rng;

pub use error::{GlipError, Result};
pub mod infer;
pub mod metrics;
pub mod prior;
