//! Macro-architecture semantics: motif stacking, shape propagation, the
//! number of cells connected to the output, and an analytic estimate of the
//! trainable parameters of the assembled network.
//!
//! Layout: `M` motifs, each with `N` normal cells followed by a reduction
//! cell that halves the spatial dims (ceiling) and doubles the filters. The
//! last motif carries its reduction cell only when `last_reduction` is set.
//! Lookbacks that reach before the first cell resolve to the stem.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cellspace::{CellSpec, OperatorKind, OperatorSpec};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MacroError {
    #[error("operator `{token}` is not supported on {rank}-d inputs")]
    UnsupportedOperator { token: String, rank: usize },
    #[error("invalid macro configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputShape {
    /// `[length]` for series, `[height, width]` for images.
    pub spatial: Vec<u32>,
    pub channels: u32,
}

impl InputShape {
    pub fn image(height: u32, width: u32, channels: u32) -> Self {
        Self {
            spatial: vec![height, width],
            channels,
        }
    }

    pub fn series(length: u32, channels: u32) -> Self {
        Self {
            spatial: vec![length],
            channels,
        }
    }

    pub fn rank(&self) -> usize {
        self.spatial.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MacroConfig {
    pub motifs: u32,
    pub normals_per_motif: u32,
    pub filters: u32,
    pub max_lookback: u32,
    pub residual_cells: bool,
    pub input_shape: InputShape,
    pub num_classes: u32,
    /// Whether the final motif ends with a reduction cell too.
    #[serde(default)]
    pub last_reduction: bool,
}

impl MacroConfig {
    pub fn validate(&self) -> Result<(), MacroError> {
        let bad = |s: &str| Err(MacroError::Invalid(s.to_string()));
        if self.motifs == 0 {
            return bad("M must be positive");
        }
        if self.filters == 0 {
            return bad("F must be positive");
        }
        if self.max_lookback == 0 {
            return bad("lookback must be positive");
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive");
        }
        if !(1..=2).contains(&self.input_shape.rank())
            || self.input_shape.spatial.contains(&0)
            || self.input_shape.channels == 0
        {
            return bad("input shape must be 1-d or 2-d with positive dims");
        }
        Ok(())
    }

    pub fn total_cells(&self) -> usize {
        let per_motif = self.normals_per_motif as usize + 1;
        let n = self.motifs as usize * per_motif;
        if self.last_reduction {
            n
        } else {
            n - 1
        }
    }

    pub fn with_shape(&self, motifs: u32, normals: u32, filters: u32) -> MacroConfig {
        MacroConfig {
            motifs,
            normals_per_motif: normals,
            filters,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellRole {
    Normal,
    Reduction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub spatial: Vec<u32>,
    pub channels: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellShape {
    pub role: CellRole,
    pub motif: u32,
    pub output: TensorShape,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeState {
    pub stem: TensorShape,
    pub cells: Vec<CellShape>,
    /// Shape handled by the normal cells of each motif.
    pub motifs: Vec<TensorShape>,
}

fn halve(spatial: &[u32]) -> Vec<u32> {
    spatial.iter().map(|d| d.div_ceil(2)).collect()
}

/// Output shapes of the stem and of every cell along the stack. Shapes
/// depend on the macro configuration only; the cell is accepted for
/// symmetry with the other macro queries.
pub fn propagate_shapes(_cell: &CellSpec, macro_cfg: &MacroConfig) -> ShapeState {
    let mut spatial = macro_cfg.input_shape.spatial.clone();
    let stem = TensorShape {
        spatial: spatial.clone(),
        channels: macro_cfg.filters,
    };
    let mut cells = Vec::with_capacity(macro_cfg.total_cells());
    let mut motifs = Vec::with_capacity(macro_cfg.motifs as usize);
    for m in 0..macro_cfg.motifs {
        let channels = macro_cfg.filters << m;
        motifs.push(TensorShape {
            spatial: spatial.clone(),
            channels,
        });
        for _ in 0..macro_cfg.normals_per_motif {
            cells.push(CellShape {
                role: CellRole::Normal,
                motif: m,
                output: TensorShape {
                    spatial: spatial.clone(),
                    channels,
                },
            });
        }
        if m + 1 < macro_cfg.motifs || macro_cfg.last_reduction {
            spatial = halve(&spatial);
            cells.push(CellShape {
                role: CellRole::Reduction,
                motif: m,
                output: TensorShape {
                    spatial: spatial.clone(),
                    channels: channels * 2,
                },
            });
        }
    }
    ShapeState { stem, cells, motifs }
}

/// 1-based indices of the cells that are backward-reachable from the last
/// cell through the lookbacks the cell uses.
fn connected_cells(lookbacks: &BTreeSet<i32>, total: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::new();
    if total == 0 {
        return seen;
    }
    if lookbacks.is_empty() {
        return (1..=total).collect();
    }
    let mut stack = vec![total];
    while let Some(k) = stack.pop() {
        if !seen.insert(k) {
            continue;
        }
        for lb in lookbacks {
            let back = lb.unsigned_abs() as usize;
            if k > back {
                stack.push(k - back);
            }
        }
    }
    seen
}

/// Number of stacked cells connected to the network output. A cell that
/// never uses the `-1` lookback leaves some cells dangling. The empty cell
/// reports the full stack.
pub fn effective_cell_count(cell: &CellSpec, macro_cfg: &MacroConfig) -> usize {
    connected_cells(&cell.lookbacks_used(), macro_cfg.total_cells()).len()
}

fn pointwise(cin: u64, cout: u64) -> u64 {
    cin * cout + 2 * cout
}

fn operator_params(op: &OperatorSpec, cin: u64, cout: u64, rank: usize) -> Result<u64, MacroError> {
    let unsupported = || MacroError::UnsupportedOperator {
        token: op.token().to_string(),
        rank,
    };
    let kind = op.kind();
    if kind.is_recurrent() && rank != 1 {
        return Err(unsupported());
    }
    let kernel_rank_ok = match kind {
        OperatorKind::Identity | OperatorKind::Lstm | OperatorKind::Gru => true,
        OperatorKind::SpatialSepConv => rank == 2,
        _ => op.kernel().len() == rank,
    };
    if !kernel_rank_ok {
        return Err(unsupported());
    }
    let area = op.kernel_area();
    let bn = 2 * cout;
    Ok(match kind {
        OperatorKind::Conv | OperatorKind::Tconv => area * cin * cout + bn,
        OperatorKind::Dconv => area * cin + cin * cout + bn,
        OperatorKind::SpatialSepConv => {
            let second = op.second_kernel_area().unwrap_or(area);
            area * cin * cout + second * cout * cout + bn
        }
        OperatorKind::Identity | OperatorKind::MaxPool | OperatorKind::AvgPool => {
            if cin == cout {
                0
            } else {
                pointwise(cin, cout)
            }
        }
        OperatorKind::Lstm => 4 * ((cin + cout) * cout + cout),
        OperatorKind::Gru => 3 * ((cin + cout) * cout + cout),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub stem: u64,
    /// Per stacked cell; zero for cells not connected to the output.
    pub cells: Vec<u64>,
    pub classifier: u64,
    pub total: u64,
}

pub fn param_breakdown(cell: &CellSpec, macro_cfg: &MacroConfig) -> Result<ParamBreakdown, MacroError> {
    macro_cfg.validate()?;
    let rank = macro_cfg.input_shape.rank();
    let shapes = propagate_shapes(cell, macro_cfg);
    let stem_area = 3u64.pow(rank as u32);
    let f = macro_cfg.filters as u64;
    let stem = stem_area * macro_cfg.input_shape.channels as u64 * f + 2 * f;

    let mut per_cell = vec![0u64; shapes.cells.len()];
    let mut last_channels = f;
    if !cell.is_empty() && !shapes.cells.is_empty() {
        let views = cell.dag_views();
        let lookbacks = &views.lookbacks_used;
        let output_of = |k: usize| -> &TensorShape {
            if k == 0 {
                &shapes.stem
            } else {
                &shapes.cells[k - 1].output
            }
        };
        for k in connected_cells(lookbacks, shapes.cells.len()) {
            let slot = &shapes.cells[k - 1];
            let nominal = output_of(k - 1);
            let c_nom = nominal.channels as u64;
            let c_out = slot.output.channels as u64;
            let mut params = 0;
            for lb in lookbacks {
                let back = lb.unsigned_abs() as usize;
                let source = output_of(k.saturating_sub(back));
                if source.channels != nominal.channels {
                    params += pointwise(source.channels as u64, c_nom);
                }
            }
            for (input, op) in cell.blocks().iter().flat_map(|b| b.pairs()) {
                let cin = if input < 0 { c_nom } else { c_out };
                params += operator_params(op, cin, c_out, rank)?;
            }
            if views.unused.len() > 1 {
                params += pointwise(views.unused.len() as u64 * c_out, c_out);
            }
            if macro_cfg.residual_cells {
                let shortcut_differs = nominal.channels != slot.output.channels;
                if shortcut_differs {
                    params += pointwise(c_nom, c_out);
                }
            }
            per_cell[k - 1] = params;
        }
        last_channels = shapes.cells.last().map(|c| c.output.channels as u64).unwrap_or(f);
    }
    let classes = macro_cfg.num_classes as u64;
    let classifier = last_channels * classes + classes;
    let total = stem + per_cell.iter().sum::<u64>() + classifier;
    Ok(ParamBreakdown {
        stem,
        cells: per_cell,
        classifier,
        total,
    })
}

/// Estimated trainable parameters of the network assembled from `cell`.
///
/// Conventions: convolutions carry no bias and are followed by a
/// normalization with two trainable vectors; pooling and identity need a
/// pointwise convolution only when the channel count changes; recurrent
/// layers use the classic 4-gate / 3-gate formulations.
pub fn count_params(cell: &CellSpec, macro_cfg: &MacroConfig) -> Result<u64, MacroError> {
    Ok(param_breakdown(cell, macro_cfg)?.total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series_macro(m: u32, n: u32, f: u32) -> MacroConfig {
        MacroConfig {
            motifs: m,
            normals_per_motif: n,
            filters: f,
            max_lookback: 2,
            residual_cells: false,
            input_shape: InputShape::series(36, 6),
            num_classes: 14,
            last_reduction: false,
        }
    }

    fn image_macro(m: u32, n: u32, f: u32) -> MacroConfig {
        MacroConfig {
            input_shape: InputShape::image(32, 32, 3),
            num_classes: 10,
            ..series_macro(m, n, f)
        }
    }

    fn cell(t: &str) -> CellSpec {
        CellSpec::parse(t).unwrap()
    }

    #[test]
    fn effective_count_with_full_motifs() {
        let m = MacroConfig {
            last_reduction: true,
            ..image_macro(3, 2, 24)
        };
        assert_eq!(m.total_cells(), 9);
        assert_eq!(effective_cell_count(&cell("[(-2, '3x3 conv', -1, '3x3 conv')]"), &m), 9);
        assert_eq!(effective_cell_count(&cell("[(-2, '3x3 conv', -2, '3x3 conv')]"), &m), 5);
        assert_eq!(effective_cell_count(&cell("[(-1, '3x3 conv', -1, '3x3 conv')]"), &m), 9);
    }

    #[test]
    fn effective_count_default_layout() {
        let m = image_macro(3, 2, 24);
        assert_eq!(m.total_cells(), 8);
        assert_eq!(effective_cell_count(&cell("[(-2, '3x3 conv', -2, '3x3 conv')]"), &m), 4);
        assert_eq!(effective_cell_count(&CellSpec::empty(), &m), 8);
    }

    #[test]
    fn image_shapes_halve_and_double() {
        let s = propagate_shapes(&CellSpec::empty(), &image_macro(3, 2, 24));
        let channels: Vec<u32> = s.motifs.iter().map(|t| t.channels).collect();
        let spatial: Vec<u32> = s.motifs.iter().map(|t| t.spatial[0]).collect();
        assert_eq!(channels, vec![24, 48, 96]);
        assert_eq!(spatial, vec![32, 16, 8]);
        assert_eq!(s.cells.len(), 8);
        assert_eq!(s.cells[2].role, CellRole::Reduction);
        assert_eq!(s.cells[2].output, TensorShape { spatial: vec![16, 16], channels: 48 });
    }

    #[test]
    fn series_shapes_use_ceiling_halving() {
        let mut m = series_macro(3, 2, 24);
        m.input_shape = InputShape::series(96, 1);
        let s = propagate_shapes(&CellSpec::empty(), &m);
        let lengths: Vec<u32> = s.motifs.iter().map(|t| t.spatial[0]).collect();
        assert_eq!(lengths, vec![96, 48, 24]);
        m.input_shape = InputShape::series(25, 1);
        m.motifs = 2;
        let s = propagate_shapes(&CellSpec::empty(), &m);
        assert_eq!(s.motifs[1].spatial, vec![13]);
    }

    #[test]
    fn empty_cell_is_stem_plus_classifier() {
        let m = image_macro(1, 0, 8);
        // stem 3*3*3*8 + 2*8 = 232, classifier 8*10 + 10 = 90
        assert_eq!(count_params(&CellSpec::empty(), &m).unwrap(), 322);
    }

    #[test]
    fn rejects_mismatched_kernels() {
        let m = series_macro(1, 1, 8);
        let err = count_params(&cell("[(-1, '3x3 conv', -1, '3x3 conv')]"), &m).unwrap_err();
        assert!(matches!(err, MacroError::UnsupportedOperator { .. }));
        let img = image_macro(1, 1, 8);
        assert!(count_params(&cell("[(-1, 'lstm', -1, 'lstm')]"), &img).is_err());
        assert!(count_params(&cell("[(-1, '1x3-3x1 conv', -1, 'identity')]"), &img).is_ok());
    }
}
