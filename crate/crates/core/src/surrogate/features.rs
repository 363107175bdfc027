use serde::{Deserialize, Serialize};

use super::{DynamicReindexMap, SurrogateError};
use crate::cellspace::CellSpec;
use crate::macroarch::{effective_cell_count, MacroConfig};

/// Structural time features of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeFeatures {
    pub blocks: usize,
    pub effective_cells: usize,
    /// Sum of the reindex values of all operators of the cell.
    pub op_score: f64,
    /// Unused blocks, concatenated into the cell output.
    pub concat_count: usize,
    pub multiple_lookbacks: bool,
    pub dag_depth: usize,
    /// Inter-block edges (input slots referring to a block).
    pub block_dependencies: usize,
    /// Share of `op_score` lying on the heaviest input-to-output path.
    pub heaviest_path_share: f64,
    /// Share of `op_score` due to operators fed by a lookback.
    pub lookback_op_share: f64,
}

pub const TIME_FEATURE_NAMES: [&str; 9] = [
    "blocks",
    "cells",
    "op_score",
    "concat_count",
    "multiple_lookbacks",
    "dag_depth",
    "block_dependencies",
    "heaviest_path_share",
    "lookback_op_share",
];

impl TimeFeatures {
    pub fn to_row(&self) -> Vec<f64> {
        vec![
            self.blocks as f64,
            self.effective_cells as f64,
            self.op_score,
            self.concat_count as f64,
            if self.multiple_lookbacks { 1.0 } else { 0.0 },
            self.dag_depth as f64,
            self.block_dependencies as f64,
            self.heaviest_path_share,
            self.lookback_op_share,
        ]
    }
}

pub fn extract_time_features(
    cell: &CellSpec,
    macro_cfg: &MacroConfig,
    reindex: &DynamicReindexMap,
) -> Result<TimeFeatures, SurrogateError> {
    let views = cell.dag_views();
    let weight = |op| {
        reindex
            .get(op)
            .ok_or_else(|| SurrogateError::MissingOperator(op.token().to_string()))
    };
    let mut op_score = 0.0;
    let mut lookback_score = 0.0;
    // heaviest path ending at each block output
    let mut heaviest = vec![0.0f64; cell.len()];
    for (j, block) in cell.blocks().iter().enumerate() {
        let mut best = 0.0f64;
        for (input, op) in block.pairs() {
            let w = weight(op)?;
            op_score += w;
            let upstream = if input < 0 {
                lookback_score += w;
                0.0
            } else {
                heaviest[input as usize]
            };
            best = best.max(upstream + w);
        }
        heaviest[j] = best;
    }
    let heaviest_path = views
        .unused
        .iter()
        .map(|&j| heaviest[j])
        .fold(0.0f64, f64::max);
    let share = |part: f64| if op_score > 0.0 { part / op_score } else { 0.0 };
    Ok(TimeFeatures {
        blocks: cell.len(),
        effective_cells: effective_cell_count(cell, macro_cfg),
        op_score,
        concat_count: views.unused.len(),
        multiple_lookbacks: views.lookbacks_used.len() > 1,
        dag_depth: views.depth,
        block_dependencies: views.edges,
        heaviest_path_share: share(heaviest_path),
        lookback_op_share: share(lookback_score),
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::macroarch::InputShape;

    fn macro_cfg() -> MacroConfig {
        MacroConfig {
            motifs: 3,
            normals_per_motif: 2,
            filters: 24,
            max_lookback: 2,
            residual_cells: true,
            input_shape: InputShape::image(32, 32, 3),
            num_classes: 10,
            last_reduction: false,
        }
    }

    fn reindex(pairs: &[(&str, f64)]) -> DynamicReindexMap {
        DynamicReindexMap {
            values: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
            t0: 1.0,
            max_time: 2.0,
        }
    }

    // A = '1x1 conv', B = '3x3 conv', C = '5x5 conv', D = '7x7 dconv'
    #[test]
    fn two_block_hand_oracle() {
        let map = reindex(&[("1x1 conv", 0.2), ("3x3 conv", 0.4), ("5x5 conv", 0.1), ("7x7 dconv", 0.9)]);
        let cell = CellSpec::parse("[(-2, '1x1 conv', -1, '3x3 conv');(0, '5x5 conv', -1, '7x7 dconv')]").unwrap();
        let f = extract_time_features(&cell, &macro_cfg(), &map).unwrap();
        assert_eq!(f.blocks, 2);
        assert_eq!(f.concat_count, 1);
        assert!(f.multiple_lookbacks);
        assert_eq!(f.dag_depth, 2);
        assert_eq!(f.block_dependencies, 1);
        assert!((f.op_score - 1.6).abs() < 1e-12);
        assert!((f.lookback_op_share - 0.9375).abs() < 1e-12);
        assert!((f.heaviest_path_share - 0.5625).abs() < 1e-12);
        assert_eq!(f.effective_cells, 8);
    }

    #[test]
    fn symmetric_block() {
        let map = reindex(&[("3x3 conv", 0.3)]);
        let cell = CellSpec::parse("[(-1, '3x3 conv', -1, '3x3 conv')]").unwrap();
        let f = extract_time_features(&cell, &macro_cfg(), &map).unwrap();
        assert!((f.op_score - 0.6).abs() < 1e-12);
        assert_eq!(f.lookback_op_share, 1.0);
        assert!((f.heaviest_path_share - 0.5).abs() < 1e-12);
        assert!(!f.multiple_lookbacks);
    }

    #[test]
    fn empty_cell_is_all_zero_but_cells() {
        let f = extract_time_features(&CellSpec::empty(), &macro_cfg(), &reindex(&[])).unwrap();
        let row = f.to_row();
        assert_eq!(row[1], 8.0);
        assert!(row.iter().enumerate().all(|(i, v)| i == 1 || *v == 0.0));
    }

    #[test]
    fn missing_operator_is_an_error() {
        let cell = CellSpec::parse("[(-1, '3x3 conv', -1, 'identity')]").unwrap();
        let err = extract_time_features(&cell, &macro_cfg(), &reindex(&[("3x3 conv", 0.3)])).unwrap_err();
        assert_eq!(err, SurrogateError::MissingOperator("identity".into()));
    }
}
