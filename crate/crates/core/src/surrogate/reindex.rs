use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SurrogateError;
use crate::cellspace::OperatorSpec;

/// Relative training-time cost of every operator, in `[0, 1]`.
///
/// Built from the training time `t0` of the empty cell and the times of the
/// symmetric one-block cells `[(-1, o, -1, o)]`; the slowest operator maps
/// to 1 and `t0` maps to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicReindexMap {
    pub values: BTreeMap<String, f64>,
    pub t0: f64,
    pub max_time: f64,
}

impl DynamicReindexMap {
    pub fn get(&self, op: &OperatorSpec) -> Option<f64> {
        self.values.get(op.token()).copied()
    }
}

pub fn compute_dynamic_reindex<'a, I>(t0: f64, mono_block_times: I) -> Result<DynamicReindexMap, SurrogateError>
where
    I: IntoIterator<Item = (&'a OperatorSpec, f64)>,
{
    let times: Vec<(&OperatorSpec, f64)> = mono_block_times.into_iter().collect();
    if times.is_empty() {
        return Err(SurrogateError::InsufficientData { rows: 0, needed: 1 });
    }
    let max_time = times.iter().map(|(_, t)| *t).fold(f64::NEG_INFINITY, f64::max);
    if !(max_time > t0) || !t0.is_finite() || !max_time.is_finite() {
        return Err(SurrogateError::DegenerateTimes { t0, max_time });
    }
    let span = max_time - t0;
    let values = times
        .into_iter()
        .map(|(op, t)| (op.token().to_string(), ((t - t0) / span).clamp(0.0, 1.0)))
        .collect();
    Ok(DynamicReindexMap { values, t0, max_time })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ops() -> Vec<OperatorSpec> {
        ["3x3 conv", "5x5 conv", "2x2 maxpool", "identity"]
            .iter()
            .map(|t| OperatorSpec::parse(t).unwrap())
            .collect()
    }

    #[test]
    fn formula_endpoints_and_midpoint() {
        let ops = ops();
        let times = [30.0, 20.0, 10.0, 9.0];
        let map = compute_dynamic_reindex(10.0, ops.iter().zip(times)).unwrap();
        assert_eq!(map.get(&ops[0]), Some(1.0));
        assert_eq!(map.get(&ops[1]), Some(0.5));
        assert_eq!(map.get(&ops[2]), Some(0.0));
        // faster than the empty cell: clamped
        assert_eq!(map.get(&ops[3]), Some(0.0));
        assert_eq!(map.max_time, 30.0);
    }

    #[test]
    fn degenerate_times_are_rejected() {
        let ops = ops();
        let err = compute_dynamic_reindex(10.0, ops.iter().zip([10.0, 5.0, 1.0, 2.0])).unwrap_err();
        assert!(matches!(err, SurrogateError::DegenerateTimes { .. }));
        assert!(compute_dynamic_reindex(10.0, std::iter::empty()).is_err());
    }
}
