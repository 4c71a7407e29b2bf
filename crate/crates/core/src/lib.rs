//! Benchmark engine for explainable anomaly detection on multivariate time series.
//!
//! The crate covers the whole evaluation loop: synthetic trace generation with
//! labeled anomalies ([`datagen`]), data preparation ([`transform`]), baseline
//! detectors and unsupervised thresholding ([`detectors`]), range-based
//! detection metrics ([`ad_eval`]), explainers ([`explainers`]), explanation
//! metrics ([`ed_eval`]) and the configuration-driven [`pipeline`].

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ad_eval;
pub mod datagen;
pub mod detectors;
pub mod ed_eval;
mod error;
pub mod explainers;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod stats;
pub mod transform;

pub use error::{Error, Result};
