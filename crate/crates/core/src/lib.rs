//! Gaussian concept subspaces over hidden representations.
//!
//! The crate is organised around the stages of the estimation pipeline:
//!
//! - [`repstore`]: on-disk format for labeled last-token representations.
//! - [`synthgen`]: seeded generator of hierarchical concept data.
//! - [`probes`]: resampling and L2-regularized logistic probes.
//! - [`subspace`]: diagonal Gaussian fit, truncated sampling, baselines.
//! - [`metrics`]: faithfulness and plausibility measurements.
//! - [`steering`]: toy residual-stream transformer and interventions.
//! - [`pipeline`]: config-driven end-to-end orchestration.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod probes;
pub mod repstore;
pub mod seed;
pub mod steering;
pub mod subspace;
pub mod synthgen;

pub use error::{GcsError, Result};
