use std::path::Path;

use super::{EngineError, RunDir};
use crate::surrogate::{score_predictions, PredictionRecord, PredictionScore};

/// Predictor scores at one step; `None` when the metric is undefined there
/// (fewer than two measured cells, constant measurements, no predictions).
#[derive(Debug, Clone, PartialEq)]
pub struct StepQuality {
    pub step: usize,
    pub evaluated: usize,
    pub time: Option<PredictionScore>,
    pub accuracy: Option<PredictionScore>,
}

/// Scores each step's predictions (steps 2 and later) against the
/// measurements logged in its CSV.
pub fn report_predictor_quality(run_dir: &Path) -> Result<Vec<StepQuality>, EngineError> {
    let rd = RunDir::new(run_dir);
    let mut out = Vec::new();
    for step in rd.steps_on_disk().into_iter().filter(|s| *s >= 2) {
        let rows = rd.read_step_csv(step)?;
        let score = |pick: &dyn Fn(&super::StepRow) -> Option<(f64, f64)>| {
            let records: Vec<PredictionRecord> = rows
                .iter()
                .filter_map(|r| {
                    pick(r).map(|(p, m)| PredictionRecord {
                        cell: r.cell.to_string(),
                        predicted: p,
                        measured: Some(m),
                    })
                })
                .collect();
            score_predictions(&records).ok()
        };
        out.push(StepQuality {
            step,
            evaluated: rows.len(),
            time: score(&|r| r.pred_time_s.map(|p| (p, r.time_s))),
            accuracy: score(&|r| r.pred_accuracy.map(|p| (p, r.accuracy))),
        });
    }
    Ok(out)
}
