//! Performance estimation: dynamic reindex, time features, boosted-tree
//! regressors with K-fold ensembling and random hyperparameter search, and
//! predictor scoring.

mod encoding;
mod ensemble;
mod features;
pub mod gbdt;
mod metrics;
mod reindex;

pub use encoding::{fit_accuracy_default, AccuracyPredictor, OperatorBaseline, CellEncoder, TimePredictor};
pub use ensemble::{fit_regressor, EnsembleModel, RegressorConfig, SearchSpace};
pub use features::{extract_time_features, TimeFeatures, TIME_FEATURE_NAMES};
pub use metrics::{average_ranks, score_predictions, spearman, PredictionRecord, PredictionScore};
pub use reindex::{compute_dynamic_reindex, DynamicReindexMap};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurrogateError {
    #[error("empty-cell time {t0} is not below the slowest operator time {max_time}")]
    DegenerateTimes { t0: f64, max_time: f64 },
    #[error("no reindex value for operator `{0}`")]
    MissingOperator(String),
    #[error("insufficient data: {rows} rows, need at least {needed}")]
    InsufficientData { rows: usize, needed: usize },
    #[error("non-finite regression target")]
    NonFiniteTarget,
    #[error("feature rows have inconsistent lengths")]
    RaggedRows,
    #[error("accuracy {0} outside [0, 1]")]
    AccuracyOutOfRange(f64),
    #[error("cell encoding failed: {0}")]
    Encoding(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("model dump line {line}: {reason}")]
    BadDump { line: usize, reason: String },
}
