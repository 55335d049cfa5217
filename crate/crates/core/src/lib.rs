//! Shapley value-function semantics under a single amortized estimation
//! framework, explanation-quality metrics and analysis of case-review logs.
//!
//! Everything operates in *model space*: numeric features are robust-scaled
//! and tanh-saturated, categorical features hold their ordinal code as `f64`.

pub mod amortizer;
pub mod analysis;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod oracle;
pub mod pipeline;
pub mod review;
pub mod rng;
pub mod simulate;
pub mod valuefunctions;

pub use error::{Error, Result};
