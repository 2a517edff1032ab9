//! Face morphing with identity-guided diffusion sampling over analytic toy models.
//!
//! The crate provides a variance-preserving noise schedule, closed-form Gaussian noise
//! predictors, deterministic DDIM / DPM++ 2M solvers, the DiM, Morph-PIPE and greedy
//! guided morphing pipelines, identity heuristics with analytic gradients, RAdam, and
//! the MMPMR / MAP / RSM vulnerability metrics.

pub mod error;
pub mod greedy;
pub mod heuristics;
pub mod metrics;
pub mod morph;
pub mod optim;
pub mod schedule;
pub mod solvers;
pub mod toymodel;

pub use error::{Error, Result};
