//! Blood-lactate forecasting pipeline for irregular ICU event data.
//!
//! The crate is organized around one interchange type, [`data::AlignedGrid`]:
//! a per-stay feature-by-time-bin matrix with a parallel observation mask.
//! [`ingest`] builds grids from raw CSV extracts, [`synth`] generates
//! synthetic cohorts and corrupts them with parameterized missingness,
//! [`impute`] fills missing entries behind a fit/transform contract,
//! [`models`] provides the three regressors, and [`eval`] runs k-fold
//! cross-validated experiments over the imputer-by-model grid.

pub mod data;
pub mod error;
pub mod eval;
pub mod impute;
pub mod ingest;
pub mod models;
pub mod seeding;
pub mod synth;

pub use error::{Error, Result};
