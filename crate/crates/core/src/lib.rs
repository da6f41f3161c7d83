//! Token-level Mahalanobis distance uncertainty scoring for LLM generations.
//!
//! The crate turns exported per-token hidden states into sequence- and
//! claim-level uncertainty scores: correctness-filtered Gaussian fits per
//! layer ([`density`]), averaged token distances as layer-wise features
//! ([`features`]), a PCA + linear-regression scorer ([`regress`]), an
//! optional rank-based hybrid with a probability score ([`hybrid`]) and the
//! selective-generation and fact-checking metrics to evaluate them
//! ([`metrics`]). [`pipeline`] wires these into the command-line workflow.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod density;
pub mod embedstore;
pub mod error;
pub mod features;
pub mod hybrid;
pub mod linalg;
pub mod metrics;
pub mod model_file;
pub mod pipeline;
pub mod regress;
pub mod scalar;
pub mod synthetic;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar used by the command-line pipeline.
pub type Real = f64;

pub type Matrix = linalg::Matrix<Real>;
pub type GaussianLayerStats = density::GaussianLayerStats<Real>;
pub type PcaProjector = features::PcaProjector<Real>;
pub type HuqParams = hybrid::HuqParams<Real>;
pub type UqModel = regress::UqModel<Real>;
pub type FitOutcome = regress::FitOutcome<Real>;

pub type GaussianLayerStats32 = density::GaussianLayerStats<f32>;
pub type UqModel32 = regress::UqModel<f32>;
