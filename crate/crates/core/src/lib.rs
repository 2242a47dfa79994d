//! Weakly supervised temporal anomaly scoring over precomputed snippet features.
//!
//! A video is a bag of snippet features. [`lanet`] mixes snippets with
//! multi-head attention plus a Gaussian locality prior, [`scorer`] maps the
//! result through a pointwise MLP and a causal temporal convolution to
//! per-snippet scores, and [`losses`] combines a top-k MIL loss with the
//! dynamics ranking and dynamics alignment terms. [`trainer`] optimizes the
//! objective with Adam under cosine decay, [`metrics`] evaluates frame-level
//! ROC-AUC and AP, and [`data`] handles feature files and synthetic datasets.

pub mod config;
pub mod data;
pub mod error;
pub mod lanet;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod model;
pub mod scorer;
pub mod trainer;

pub use error::{Error, FormatError, Result};
pub use math::Matrix;
