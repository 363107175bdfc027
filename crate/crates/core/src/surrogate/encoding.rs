use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    extract_time_features, fit_regressor, DynamicReindexMap, EnsembleModel, SearchSpace, SurrogateError,
};
use crate::cellspace::{CellSpec, Canonicalizer, InputRef, OperatorSpec};
use crate::macroarch::MacroConfig;

/// Fixed-length encoding of a cell for the default accuracy predictor.
///
/// Each of the `max_blocks` slots holds the two input codes (1-based, 0 for
/// padding) followed by a one-hot vector per operator. Cells are encoded
/// through their canonical representative so isomorphs share a row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEncoder {
    pub operators: Vec<OperatorSpec>,
    pub max_blocks: usize,
    pub max_lookback: u32,
}

impl CellEncoder {
    pub fn new(operators: &[OperatorSpec], max_blocks: usize, max_lookback: u32) -> Self {
        let mut operators = operators.to_vec();
        operators.sort();
        Self {
            operators,
            max_blocks,
            max_lookback,
        }
    }

    /// Uses of each operator (in sorted order) across all blocks.
    pub fn operator_counts(&self, cell: &CellSpec) -> Result<Vec<f64>, SurrogateError> {
        let mut counts = vec![0.0; self.operators.len()];
        for block in cell.blocks() {
            for (_, op) in block.pairs() {
                let index = self
                    .operators
                    .binary_search(op)
                    .map_err(|_| SurrogateError::MissingOperator(op.token().to_string()))?;
                counts[index] += 1.0;
            }
        }
        Ok(counts)
    }

    pub fn width(&self) -> usize {
        self.max_blocks * (2 + 2 * self.operators.len())
    }

    fn input_code(&self, input: InputRef) -> f64 {
        (input + self.max_lookback as InputRef + 1) as f64
    }

    pub fn encode(&self, cell: &CellSpec) -> Result<Vec<f64>, SurrogateError> {
        if cell.len() > self.max_blocks {
            return Err(SurrogateError::Encoding(format!(
                "cell has {} blocks, encoder holds {}",
                cell.len(),
                self.max_blocks
            )));
        }
        let rep = Canonicalizer::default()
            .representative(cell)
            .map_err(|e| SurrogateError::Encoding(e.to_string()))?;
        let n_ops = self.operators.len();
        let slot = 2 + 2 * n_ops;
        let mut row = vec![0.0; self.width()];
        for (j, block) in rep.blocks().iter().enumerate() {
            let base = j * slot;
            for (side, (input, op)) in block.pairs().into_iter().enumerate() {
                let index = self
                    .operators
                    .binary_search(op)
                    .map_err(|_| SurrogateError::MissingOperator(op.token().to_string()))?;
                row[base + side] = self.input_code(input);
                row[base + 2 + side * n_ops + index] = 1.0;
            }
        }
        Ok(row)
    }
}

/// Ridge regression of the log error rate `ln(1 - accuracy)` on
/// per-operator usage counts.
///
/// Trees cannot split on a slot that was always padding, so the ensemble
/// alone would ignore the newest block; this linear part extrapolates and
/// saturates towards accuracy 1 instead of overshooting it.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorBaseline {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

const RIDGE: f64 = 1e-2;
const ERROR_FLOOR: f64 = 1e-3;

fn log_error(accuracy: f64) -> f64 {
    (1.0 + ERROR_FLOOR - accuracy).ln()
}

impl OperatorBaseline {
    /// `counts[i][k]` is how often operator `k` appears in row `i`.
    pub fn fit(counts: &[Vec<f64>], accuracies: &[f64]) -> Self {
        let width = counts.first().map_or(0, Vec::len);
        let targets: Vec<f64> = accuracies.iter().map(|a| log_error(*a)).collect();
        if targets.is_empty() || targets.iter().all(|y| *y == targets[0]) {
            return Self { intercept: targets.first().copied().unwrap_or(0.0), weights: vec![0.0; width] };
        }
        let x = DMatrix::from_fn(counts.len(), width + 1, |i, j| if j == 0 { 1.0 } else { counts[i][j - 1] });
        let y = DVector::from_column_slice(&targets);
        let mut gram = x.transpose() * &x;
        for j in 1..=width {
            gram[(j, j)] += RIDGE;
        }
        let rhs = x.transpose() * y;
        let w = match gram.cholesky() {
            Some(c) => c.solve(&rhs),
            None => return Self { intercept: targets.iter().sum::<f64>() / targets.len() as f64, weights: vec![0.0; width] },
        };
        Self { intercept: w[0], weights: w.iter().skip(1).copied().collect() }
    }

    /// Baseline accuracy for a row of operator counts.
    pub fn at(&self, counts: &[f64]) -> f64 {
        let z = self.intercept + self.weights.iter().zip(counts).map(|(w, c)| w * c).sum::<f64>();
        1.0 + ERROR_FLOOR - z.exp()
    }
}

/// Boosted-tree accuracy predictor over encoded cells; outputs in `[0, 1]`.
///
/// The ensemble models the residual left by an [`OperatorBaseline`].
#[derive(Debug, Clone)]
pub struct AccuracyPredictor {
    pub baseline: OperatorBaseline,
    pub model: EnsembleModel,
    pub encoder: CellEncoder,
}

impl AccuracyPredictor {
    pub fn predict(&self, cell: &CellSpec) -> Result<f64, SurrogateError> {
        let residual = self.model.predict(&self.encoder.encode(cell)?);
        let base = self.baseline.at(&self.encoder.operator_counts(cell)?);
        Ok((base + residual).clamp(0.0, 1.0))
    }

    pub fn to_dump(&self) -> String {
        let weights: Vec<String> = self.baseline.weights.iter().map(f64::to_string).collect();
        format!(
            "accuracy-predictor v1\nbaseline intercept={} weights={}\n{}",
            self.baseline.intercept,
            weights.join(","),
            self.model.to_dump()
        )
    }

    pub fn from_dump(text: &str, encoder: &CellEncoder) -> Result<Self, SurrogateError> {
        use super::gbdt::{bad_dump, key_values, parse_field};
        let mut lines = text.splitn(3, '\n');
        if lines.next() != Some("accuracy-predictor v1") {
            return Err(bad_dump(1, "missing `accuracy-predictor v1` header"));
        }
        let f = lines
            .next()
            .and_then(|l| key_values(l, "baseline"))
            .ok_or_else(|| bad_dump(2, "expected `baseline`"))?;
        let raw: String = parse_field(&f, "weights", 2)?;
        let weights = if raw.is_empty() {
            Vec::new()
        } else {
            raw.split(',')
                .map(|w| w.parse().map_err(|_| bad_dump(2, "malformed weight")))
                .collect::<Result<Vec<f64>, _>>()?
        };
        if weights.len() != encoder.operators.len() {
            return Err(bad_dump(2, "baseline width does not match the encoder"));
        }
        Ok(Self {
            baseline: OperatorBaseline { intercept: parse_field(&f, "intercept", 2)?, weights },
            model: EnsembleModel::from_dump(lines.next().unwrap_or(""))?,
            encoder: encoder.clone(),
        })
    }
}

pub fn fit_accuracy_default(
    cells: &[(CellSpec, f64)],
    encoder: &CellEncoder,
    space: &SearchSpace,
    seed: u64,
) -> Result<AccuracyPredictor, SurrogateError> {
    if let Some((_, bad)) = cells.iter().find(|(_, a)| !(0.0..=1.0).contains(a)) {
        return Err(SurrogateError::AccuracyOutOfRange(*bad));
    }
    let rows = cells
        .iter()
        .map(|(c, _)| encoder.encode(c))
        .collect::<Result<Vec<_>, _>>()?;
    let counts = cells
        .iter()
        .map(|(c, _)| encoder.operator_counts(c))
        .collect::<Result<Vec<_>, _>>()?;
    let targets: Vec<f64> = cells.iter().map(|(_, a)| *a).collect();
    let baseline = OperatorBaseline::fit(&counts, &targets);
    let residuals: Vec<f64> = counts.iter().zip(&targets).map(|(c, a)| a - baseline.at(c)).collect();
    Ok(AccuracyPredictor {
        baseline,
        model: fit_regressor(&rows, &residuals, space, seed)?,
        encoder: encoder.clone(),
    })
}

/// Boosted-tree training-time predictor over [`super::TimeFeatures`];
/// outputs are non-negative seconds.
#[derive(Debug, Clone)]
pub struct TimePredictor {
    pub model: EnsembleModel,
    pub reindex: DynamicReindexMap,
    pub macro_cfg: MacroConfig,
}

impl TimePredictor {
    pub fn fit(
        cells: &[(CellSpec, f64)],
        macro_cfg: &MacroConfig,
        reindex: &DynamicReindexMap,
        space: &SearchSpace,
        seed: u64,
    ) -> Result<Self, SurrogateError> {
        let rows = cells
            .iter()
            .map(|(c, _)| extract_time_features(c, macro_cfg, reindex).map(|f| f.to_row()))
            .collect::<Result<Vec<_>, _>>()?;
        let targets: Vec<f64> = cells.iter().map(|(_, t)| *t).collect();
        Ok(Self {
            model: fit_regressor(&rows, &targets, space, seed)?,
            reindex: reindex.clone(),
            macro_cfg: macro_cfg.clone(),
        })
    }

    pub fn predict(&self, cell: &CellSpec) -> Result<f64, SurrogateError> {
        let row = extract_time_features(cell, &self.macro_cfg, &self.reindex)?.to_row();
        Ok(self.model.predict(&row).max(0.0))
    }
}
