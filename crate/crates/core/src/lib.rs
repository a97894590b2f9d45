//! Regression engine for price-like daily series.
//!
//! The pipeline: [`ingest`] aligns raw daily series, [`preprocess`] takes
//! `ln(x + 1)` and z-scores the regressors, [`lasso`] fits the linear model by
//! coordinate descent, [`correction`] turns expert pivot points on the
//! deviation series into an extra regressor, [`bayes`] refits under a
//! Student-t likelihood for uncertainty and value at risk, and [`eval`] ties
//! it together into a base-vs-corrected report.

pub mod bayes;
pub mod correction;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod lasso;
pub mod preprocess;
pub mod synthetic;

pub use error::{Error, Result};

pub const DEFAULT_TARGET: &str = "price";

/// Regressors of the base model, in fitting order.
pub const DEFAULT_FEATURES: [&str; 6] = [
    "gtrend",
    "wiki_cryptocurrency",
    "difficulty",
    "n_unique_addresses",
    "total_bitcoins",
    "volume",
];
