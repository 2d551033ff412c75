//! Simulation and fuzzy regression-discontinuity analysis of score-threshold
//! content moderation.
//!
//! The pipeline runs simulate → cohorts → bandwidth → estimate → diagnose:
//!
//! - [`sim`] generates event logs with known potential outcomes,
//! - [`data`] reads, writes and validates event logs,
//! - [`cohort`] builds thread- and user-level analysis units,
//! - [`bandwidth`] picks MSE-optimal kernel bandwidths,
//! - [`estimate`] runs local-linear two-stage least squares,
//! - [`diagnostics`] holds the density test, placebo and sweep checks,
//! - [`report`] and [`pipeline`] assemble the result tables.

pub mod data;
pub mod bandwidth;
pub mod cohort;
pub mod design;
pub mod diagnostics;
pub mod error;
pub mod estimate;
mod linalg;
pub mod pipeline;
pub mod report;
mod rng;
pub mod sim;

pub use error::{Error, Result};
