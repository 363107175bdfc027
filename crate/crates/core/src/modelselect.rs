//! Post-search model selection over macro modifiers, and the final training
//! of the chosen architecture.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cellspace::{CellSpec, Canonicalizer};
use crate::config::Config;
use crate::engine::{EngineError, RunDir};
use crate::evaluator::{EvaluationRequest, EvaluationResult, Evaluator, EvaluatorError, TrainingParams};
use crate::macroarch::{count_params, MacroConfig};

pub const SELECTION_CSV_HEADER: [&str; 7] = ["cell", "M", "N", "F", "params", "accuracy", "time_s"];

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("the search in {0} has not finished")]
    SearchNotFinished(String),
    #[error("no evaluated cells to select from")]
    NoCells,
    #[error("no configuration could be evaluated within the parameter range")]
    NoFeasibleConfig,
    #[error("model selection output missing: {0}")]
    MissingSelection(String),
    #[error(transparent)]
    Evaluator(#[from] EvaluatorError),
}

/// How the top cells are re-trained across macro variants.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    pub top_k: usize,
    /// Exclusive `(P_min, P_max)`; the modifier grid is skipped when absent.
    pub params_range: Option<(u64, u64)>,
    pub m_mod: Vec<u32>,
    pub n_mod: Vec<u32>,
    pub f_mod: Vec<f64>,
    pub training: TrainingParams,
}

fn overlay(base: &TrainingParams, extra: &TrainingParams) -> TrainingParams {
    let mut out = base.clone();
    for (k, v) in extra {
        out.insert(k.clone(), v.clone());
    }
    out
}

impl SelectionConfig {
    pub fn from_config(config: &Config) -> Self {
        let s = &config.selection;
        Self {
            top_k: s.top_k,
            params_range: s.params_min.zip(s.params_max),
            m_mod: s.m_mod.clone(),
            n_mod: s.n_mod.clone(),
            f_mod: s.f_mod.clone(),
            training: overlay(&config.training, &s.training),
        }
    }
}

/// A cell with its macro shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MacroShape {
    #[serde(rename = "M")]
    pub motifs: u32,
    #[serde(rename = "N")]
    pub normals: u32,
    #[serde(rename = "F")]
    pub filters: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub cell: CellSpec,
    #[serde(flatten)]
    pub shape: MacroShape,
    pub params: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<EvaluationResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub best: SelectionRecord,
    pub evaluations: Vec<SelectionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub cell: CellSpec,
    #[serde(flatten)]
    pub shape: MacroShape,
    pub params: u64,
    pub training: TrainingParams,
    pub result: EvaluationResult,
}

fn in_range(params: u64, range: Option<(u64, u64)>) -> bool {
    range.is_none_or(|(lo, hi)| lo < params && params < hi)
}

/// Every `floor(F * f)` whose network lands strictly inside the range, ascending.
pub fn feasible_filters(
    cell: &CellSpec,
    base: &MacroConfig,
    motifs: u32,
    normals: u32,
    f_mod: &[f64],
    range: Option<(u64, u64)>,
) -> Vec<u32> {
    let mut out: Vec<u32> = f_mod
        .iter()
        .map(|f| (base.filters as f64 * f).floor() as u32)
        .filter(|&f| f >= 1)
        .filter(|&f| {
            count_params(cell, &base.with_shape(motifs, normals, f)).is_ok_and(|p| in_range(p, range))
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Shapes to evaluate for one cell: the original first, then the widest
/// feasible filter count for each modifier pair. Repeated shapes are dropped.
pub fn selection_grid(cell: &CellSpec, base: &MacroConfig, cfg: &SelectionConfig) -> Vec<MacroShape> {
    let original = MacroShape {
        motifs: base.motifs,
        normals: base.normals_per_motif,
        filters: base.filters,
    };
    let mut grid = vec![original];
    if cfg.params_range.is_none() {
        return grid;
    }
    for &m in &cfg.m_mod {
        for &n in &cfg.n_mod {
            let (motifs, normals) = (base.motifs + m, base.normals_per_motif + n);
            let Some(&filters) = feasible_filters(cell, base, motifs, normals, &cfg.f_mod, cfg.params_range).last() else {
                continue;
            };
            let shape = MacroShape { motifs, normals, filters };
            if !grid.contains(&shape) {
                grid.push(shape);
            }
        }
    }
    grid
}

/// Best `k` searched cells by measured accuracy, then lower time.
pub fn top_cells(run_dir: &Path, k: usize) -> Result<Vec<CellSpec>, SelectionError> {
    let rd = RunDir::new(run_dir);
    let mut rows = Vec::new();
    for step in rd.steps_on_disk().into_iter().filter(|s| *s >= 1) {
        rows.extend(rd.read_step_csv(step)?);
    }
    rows.sort_by(|a, b| {
        b.accuracy
            .total_cmp(&a.accuracy)
            .then(a.time_s.total_cmp(&b.time_s))
            .then_with(|| a.cell.to_string().cmp(&b.cell.to_string()))
    });
    let canon = Canonicalizer::default();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in rows {
        let form = canon.canonical_form(&row.cell).map_err(EngineError::Cell)?;
        if seen.insert(form) {
            out.push(row.cell);
        }
        if out.len() == k {
            break;
        }
    }
    Ok(out)
}

fn finished_run(run_dir: &Path) -> Result<(RunDir, Config), SelectionError> {
    let rd = RunDir::new(run_dir);
    let config = rd.load_config()?;
    if !rd.load_state()?.finished {
        return Err(SelectionError::SearchNotFinished(run_dir.display().to_string()));
    }
    Ok((rd, config))
}

fn better(a: &SelectionRecord, b: &SelectionRecord) -> bool {
    match (&a.result, &b.result) {
        (Some(x), Some(y)) => x.accuracy > y.accuracy || (x.accuracy == y.accuracy && x.time_s < y.time_s),
        (Some(_), None) => true,
        _ => false,
    }
}

/// Re-trains the top cells on the macro grid and returns the most accurate
/// tuple. Writes `selection.csv` and `selection.json`.
pub fn run_model_selection(
    run_dir: &Path,
    cfg: &SelectionConfig,
    evaluator: &mut dyn Evaluator,
) -> Result<SelectionOutcome, SelectionError> {
    let (rd, config) = finished_run(run_dir)?;
    let base = config.macro_config();
    let cells = top_cells(run_dir, cfg.top_k)?;
    if cells.is_empty() {
        return Err(SelectionError::NoCells);
    }
    let mut evaluations = Vec::new();
    for cell in &cells {
        for shape in selection_grid(cell, &base, cfg) {
            let macro_cfg = base.with_shape(shape.motifs, shape.normals, shape.filters);
            let params = count_params(cell, &macro_cfg).unwrap_or(0);
            let request = EvaluationRequest {
                cell: cell.clone(),
                macro_cfg,
                training: cfg.training.clone(),
                dataset: config.dataset.clone(),
            };
            let (result, error) = match evaluator.evaluate(&request) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            evaluations.push(SelectionRecord {
                cell: cell.clone(),
                shape,
                params,
                result,
                error,
            });
        }
    }
    let best = evaluations
        .iter()
        .fold(None::<&SelectionRecord>, |best, r| match best {
            Some(b) if !better(r, b) => Some(b),
            _ if r.result.is_some() => Some(r),
            b => b,
        })
        .cloned()
        .ok_or(SelectionError::NoFeasibleConfig)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| EngineError::Io(format!("selection.csv: {e}"));
    w.write_record(SELECTION_CSV_HEADER).map_err(csv_err)?;
    for r in &evaluations {
        let Some(res) = &r.result else { continue };
        w.write_record([
            r.cell.to_string(),
            r.shape.motifs.to_string(),
            r.shape.normals.to_string(),
            r.shape.filters.to_string(),
            r.params.to_string(),
            res.accuracy.to_string(),
            res.time_s.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| EngineError::Io(format!("selection.csv: {e}")))?;
    rd.write_text(&run_dir.join("selection.csv"), &String::from_utf8(bytes).expect("utf8 csv"))?;
    let outcome = SelectionOutcome { best, evaluations };
    rd.write_json(&run_dir.join("selection.json"), &outcome)?;
    Ok(outcome)
}

pub fn load_selection(run_dir: &Path) -> Result<SelectionOutcome, SelectionError> {
    let path = run_dir.join("selection.json");
    let text = std::fs::read_to_string(&path).map_err(|_| SelectionError::MissingSelection(path.display().to_string()))?;
    serde_json::from_str(&text).map_err(|e| SelectionError::MissingSelection(format!("{}: {e}", path.display())))
}

/// Trains the selected tuple with the last-training map and writes `final.json`.
pub fn run_final_training(run_dir: &Path, evaluator: &mut dyn Evaluator) -> Result<FinalRecord, SelectionError> {
    let (rd, config) = finished_run(run_dir)?;
    let best = load_selection(run_dir)?.best;
    let macro_cfg = config
        .macro_config()
        .with_shape(best.shape.motifs, best.shape.normals, best.shape.filters);
    let training = overlay(&config.training, &config.final_training.training);
    let request = EvaluationRequest {
        cell: best.cell.clone(),
        macro_cfg,
        training: training.clone(),
        dataset: config.dataset.clone(),
    };
    let result = evaluator.evaluate(&request)?;
    let record = FinalRecord {
        cell: best.cell,
        shape: best.shape,
        params: result.params,
        training,
        result,
    };
    rd.write_json(&run_dir.join("final.json"), &record)?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::macroarch::InputShape;

    fn base() -> MacroConfig {
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

    fn cfg(range: Option<(u64, u64)>) -> SelectionConfig {
        SelectionConfig {
            top_k: 5,
            params_range: range,
            m_mod: vec![0, 1],
            n_mod: vec![0, 1, 2],
            f_mod: vec![0.85, 1.0, 1.5, 1.75, 2.0],
            training: TrainingParams::new(),
        }
    }

    fn cell() -> CellSpec {
        CellSpec::parse("[(-2, '3x3 conv', -1, 'identity');(0, '5x5 conv', -1, '2x2 maxpool')]").unwrap()
    }

    #[test]
    fn default_multipliers_give_paper_filter_values() {
        let all = feasible_filters(&cell(), &base(), 3, 2, &cfg(None).f_mod, None);
        assert_eq!(all, vec![20, 24, 36, 42, 48]);
    }

    #[test]
    fn grid_without_range_is_the_original_only() {
        let g = selection_grid(&cell(), &base(), &cfg(None));
        assert_eq!(g, vec![MacroShape { motifs: 3, normals: 2, filters: 24 }]);
    }

    #[test]
    fn grid_respects_range_and_maximality() {
        let c = cell();
        let p = |m, n, f| count_params(&c, &base().with_shape(m, n, f)).unwrap();
        // just wide enough for the original shape at F = 36
        let range = (p(3, 2, 20) - 1, p(3, 2, 36) + 1);
        let g = selection_grid(&c, &base(), &cfg(Some(range)));
        assert_eq!(g[0], MacroShape { motifs: 3, normals: 2, filters: 24 });
        assert!(g.contains(&MacroShape { motifs: 3, normals: 2, filters: 36 }));
        for s in &g[1..] {
            let params = p(s.motifs, s.normals, s.filters);
            assert!(range.0 < params && params < range.1);
            for f in [20, 24, 36, 42, 48].into_iter().filter(|f| *f > s.filters) {
                let larger = p(s.motifs, s.normals, f);
                assert!(!(range.0 < larger && larger < range.1));
            }
        }
        assert!(g.len() <= 1 + 6);
    }

    #[test]
    fn pair_with_no_feasible_width_is_skipped() {
        let c = cell();
        let upper = count_params(&c, &base().with_shape(3, 2, 20)).unwrap() + 1;
        let g = selection_grid(&c, &base(), &cfg(Some((0, upper))));
        // deeper pairs exceed the bound even at F = 20
        assert!(g.iter().all(|s| (s.motifs, s.normals) == (3, 2)));
        assert_eq!(g.len(), 2);
        assert_eq!(g[1].filters, 20);
    }
}
