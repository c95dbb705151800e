//! Nearest-neighbour Gaussian-process regression and tooling for measuring
//! its convergence rate against theoretical envelopes.

// `!(x > 0.0)` is used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bounds;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod linalg;
pub mod matrix_analysis;
pub mod metrics;
pub mod neighbours;
pub mod predictor;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use kernels::{Family, HyperParams, KernelSpec, MetricBound};
