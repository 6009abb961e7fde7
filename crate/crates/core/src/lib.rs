//! Longitudinal permanence analysis of biometric match scores.
//!
//! The crate covers the whole chain from capture metadata to mixed models:
//! [`model`] holds the data types and table I/O, [`pairing`] builds genuine and
//! impostor comparisons, [`metrics`] computes error rates and curves, [`lmm`]
//! fits linear mixed models by REML or ML, [`validation`] runs subject-level
//! cross-validation and residual checks, and [`synth`] generates data with
//! known ground truth.

pub mod error;
pub mod lmm;
pub mod metrics;
pub mod model;
pub mod pairing;
pub mod stats;
pub mod synth;
pub mod validation;

pub use error::{Error, Result};
