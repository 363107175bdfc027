//! Progressive, predictor-guided search over cell-based neural
//! architectures with time–accuracy Pareto selection.

pub mod cellspace;
pub mod config;
pub mod engine;
pub mod evaluator;
pub mod macroarch;
pub mod modelselect;
pub mod pareto;
pub mod surrogate;
