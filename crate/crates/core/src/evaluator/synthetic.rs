use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EvaluationRequest, EvaluationResult, Evaluator, EvaluatorError};
use crate::cellspace::{CellSpec, Canonicalizer, OperatorKind, OperatorSpec};
use crate::macroarch::{count_params, effective_cell_count, MacroConfig};

/// Constants of the synthetic oracle.
///
/// `cost` and `gain` override the per-kind defaults by operator token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleParams {
    pub t_base: f64,
    pub a_base: f64,
    pub noise: f64,
    /// Seconds per unit of operator cost per connected cell.
    pub time_scale: f64,
    /// Seconds per concatenated block beyond the first.
    pub concat_cost: f64,
    pub cost: BTreeMap<String, f64>,
    pub gain: BTreeMap<String, f64>,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            t_base: 10.0,
            a_base: 0.3,
            noise: 0.002,
            time_scale: 1.0,
            concat_cost: 0.5,
            cost: BTreeMap::new(),
            gain: BTreeMap::new(),
        }
    }
}

fn kernel_sum(op: &OperatorSpec) -> f64 {
    op.kernel_area() as f64 + op.second_kernel_area().unwrap_or(0) as f64
}

pub fn default_cost(op: &OperatorSpec) -> f64 {
    let k = kernel_sum(op);
    match op.kind() {
        OperatorKind::Identity => 0.05,
        OperatorKind::MaxPool | OperatorKind::AvgPool => 0.15 + 0.01 * k,
        OperatorKind::Conv => 0.2 + 0.04 * k * op.dilation() as f64,
        OperatorKind::Dconv => 0.15 + 0.015 * k,
        OperatorKind::SpatialSepConv => 0.2 + 0.03 * k,
        OperatorKind::Tconv => 0.3 + 0.05 * k,
        OperatorKind::Lstm => 2.0,
        OperatorKind::Gru => 1.6,
    }
}

pub fn default_gain(op: &OperatorSpec) -> f64 {
    let k = kernel_sum(op).min(49.0);
    match op.kind() {
        OperatorKind::Identity => 0.02,
        OperatorKind::MaxPool => 0.06,
        OperatorKind::AvgPool => 0.05,
        OperatorKind::Conv => 0.1 + 0.004 * k,
        OperatorKind::Dconv => 0.09 + 0.003 * k,
        OperatorKind::SpatialSepConv => 0.1 + 0.003 * k,
        OperatorKind::Tconv => 0.08 + 0.002 * k,
        OperatorKind::Lstm => 0.2,
        OperatorKind::Gru => 0.18,
    }
}

impl OracleParams {
    pub fn cost(&self, op: &OperatorSpec) -> f64 {
        self.cost.get(op.token()).copied().unwrap_or_else(|| default_cost(op))
    }

    pub fn gain(&self, op: &OperatorSpec) -> f64 {
        self.gain.get(op.token()).copied().unwrap_or_else(|| default_gain(op))
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.a_base) {
            return Err("a_base must lie in [0, 1]".into());
        }
        if !(self.t_base > 0.0) || !(self.time_scale > 0.0) || self.concat_cost < 0.0 || self.noise < 0.0 {
            return Err("t_base and time_scale must be positive, concat_cost and noise non-negative".into());
        }
        if let Some((t, _)) = self.cost.iter().find(|(_, c)| !(**c > 0.0)) {
            return Err(format!("cost of `{t}` must be positive"));
        }
        if let Some((t, _)) = self.gain.iter().find(|(_, g)| !(**g >= 0.0)) {
            return Err(format!("gain of `{t}` must be non-negative"));
        }
        Ok(())
    }
}

/// Uniform value in `[-1, 1]` derived from a stable hash.
fn hashed_unit(seed: u64, canonical: &str, macro_cfg: &MacroConfig) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(canonical.as_bytes());
    for v in [macro_cfg.motifs, macro_cfg.normals_per_motif, macro_cfg.filters] {
        h.update(v.to_le_bytes());
    }
    let digest = h.finalize();
    let word = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    // 53 random bits mapped to [0, 1], then to [-1, 1]
    (word >> 11) as f64 / ((1u64 << 53) - 1) as f64 * 2.0 - 1.0
}

/// Closed-form stand-in for training, pure in its inputs.
pub fn synthetic_evaluate(
    cell: &CellSpec,
    macro_cfg: &MacroConfig,
    params: &OracleParams,
    seed: u64,
) -> Result<EvaluationResult, EvaluatorError> {
    let failed = |e: String| EvaluatorError::EvaluationFailed(e);
    let n_params = count_params(cell, macro_cfg).map_err(|e| failed(e.to_string()))?;
    if cell.is_empty() {
        return Ok(EvaluationResult {
            accuracy: params.a_base,
            time_s: params.t_base,
            params: n_params,
            flops: None,
        });
    }
    let canon = Canonicalizer::default();
    let canonical = canon.canonical_form(cell).map_err(|e| failed(e.to_string()))?;
    // sums run over the representative so isomorphs agree to the bit
    let rep = canon.representative(cell).map_err(|e| failed(e.to_string()))?;
    let views = cell.dag_views();
    let cost: f64 = rep.operators().map(|o| params.cost(o)).sum();
    let gain: f64 = rep.operators().map(|o| params.gain(o)).sum();
    let concat = views.unused.len();
    let time_s = params.t_base
        + params.time_scale * effective_cell_count(cell, macro_cfg) as f64 * cost
        + params.concat_cost * concat.saturating_sub(1) as f64;
    let saturation = 1.0 - (-gain * (1.0 + 0.1 * views.depth as f64)).exp();
    let noise = params.noise * hashed_unit(seed, &canonical, macro_cfg);
    let accuracy = (params.a_base + (1.0 - params.a_base) * saturation + noise).clamp(0.0, 1.0);
    Ok(EvaluationResult {
        accuracy,
        time_s,
        params: n_params,
        flops: None,
    })
}

#[derive(Debug, Clone)]
pub struct SyntheticEvaluator {
    pub params: OracleParams,
    pub seed: u64,
}

impl SyntheticEvaluator {
    pub fn new(params: OracleParams, seed: u64) -> Self {
        Self { params, seed }
    }
}

impl Evaluator for SyntheticEvaluator {
    fn evaluate(&mut self, request: &EvaluationRequest) -> Result<EvaluationResult, EvaluatorError> {
        synthetic_evaluate(&request.cell, &request.macro_cfg, &self.params, self.seed)
    }
}
