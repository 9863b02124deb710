//! Sample construction, k-fold assignment, evaluation metrics, and the
//! cross-validated imputer-by-model experiment runner.

mod experiment;
mod folds;
mod metrics;
pub mod report;
mod samples;

pub use experiment::{
    mean_std, run_experiment, CellResult, ExperimentConfig, ExperimentOutput, FoldMetrics,
    FoldOutcome, ModelKind, PredictionRow, ResultTable,
};
pub use folds::{kfold, FoldAssignment};
pub use metrics::{mae, r2, rmse};
pub use samples::{build_samples, SampleBuild, StaticEncoder};
