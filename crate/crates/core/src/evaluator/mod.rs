//! Candidate evaluation: the contract the engine drives, a deterministic
//! synthetic oracle, and a bridge to an external trainer process.

mod bridge;
mod synthetic;

pub use bridge::{
    error_frame, BridgeOptions, EvaluateReply, HelloReply, MacroFrame, OkReply, PredsReply, WorkerBridge,
    WorkerRequest, PROTOCOL_VERSION,
};
pub use synthetic::{default_cost, default_gain, synthetic_evaluate, OracleParams, SyntheticEvaluator};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::cellspace::CellSpec;
use crate::macroarch::MacroConfig;

/// Free-form hyperparameter map handed to the trainer (epochs, lr, ...).
pub type TrainingParams = Map<String, Value>;

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRequest {
    pub cell: CellSpec,
    pub macro_cfg: MacroConfig,
    pub training: TrainingParams,
    pub dataset: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    /// Best validation accuracy.
    pub accuracy: f64,
    pub time_s: f64,
    pub params: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flops: Option<u64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluatorError {
    #[error("evaluation failed: {0}")]
    EvaluationFailed(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("worker error {code}: {message}")]
    Worker { code: String, message: String },
    #[error("no response within {0} s")]
    Timeout(f64),
    #[error("{0} is not supported by this evaluator")]
    Unsupported(&'static str),
}

/// Anything able to train and score a candidate network.
///
/// The accuracy-predictor hooks let an external process serve its own
/// predictor; the default implementations report them as unsupported.
pub trait Evaluator {
    fn evaluate(&mut self, request: &EvaluationRequest) -> Result<EvaluationResult, EvaluatorError>;

    fn fit_accuracy(&mut self, _rows: &[(CellSpec, f64)]) -> Result<(), EvaluatorError> {
        Err(EvaluatorError::Unsupported("fit_acc"))
    }

    fn predict_accuracy(&mut self, _cells: &[CellSpec]) -> Result<Vec<f64>, EvaluatorError> {
        Err(EvaluatorError::Unsupported("predict_acc"))
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn evaluate(&mut self, request: &EvaluationRequest) -> Result<EvaluationResult, EvaluatorError> {
        (**self).evaluate(request)
    }

    fn fit_accuracy(&mut self, rows: &[(CellSpec, f64)]) -> Result<(), EvaluatorError> {
        (**self).fit_accuracy(rows)
    }

    fn predict_accuracy(&mut self, cells: &[CellSpec]) -> Result<Vec<f64>, EvaluatorError> {
        (**self).predict_accuracy(cells)
    }
}
