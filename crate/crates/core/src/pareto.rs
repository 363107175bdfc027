//! Time–accuracy Pareto fronts with isomorphism pruning, exploration sets and
//! the exploration front.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::cellspace::{canonical_form, CellError, CellSpec, InputRef, OperatorSpec};

/// A candidate cell with its predicted accuracy and training time.
///
/// The canonical form is computed once at construction and used for
/// isomorphism pruning.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub cell: CellSpec,
    pub predicted_accuracy: f64,
    pub predicted_time: f64,
    canonical: String,
}

impl ScoredCandidate {
    pub fn new(cell: CellSpec, predicted_accuracy: f64, predicted_time: f64) -> Result<Self, CellError> {
        let canonical = canonical_form(&cell)?;
        Ok(Self::with_canonical(cell, predicted_accuracy, predicted_time, canonical))
    }

    /// Builds a candidate from a canonical form the caller already holds.
    pub fn with_canonical(cell: CellSpec, predicted_accuracy: f64, predicted_time: f64, canonical: String) -> Self {
        Self {
            cell,
            predicted_accuracy,
            predicted_time,
            canonical,
        }
    }

    pub fn canonical(&self) -> &str {
        &self.canonical
    }
}

/// `a` dominates `b`: no worse on both objectives and strictly better on one.
pub fn dominates(a: &ScoredCandidate, b: &ScoredCandidate) -> bool {
    let (aa, at) = (a.predicted_accuracy, a.predicted_time);
    let (ba, bt) = (b.predicted_accuracy, b.predicted_time);
    aa >= ba && at <= bt && (aa > ba || at < bt)
}

/// O(n²) check that no member of `front` dominates another.
pub fn is_mutually_non_dominated(front: &[ScoredCandidate]) -> bool {
    front
        .iter()
        .enumerate()
        .all(|(i, a)| front.iter().enumerate().all(|(j, b)| i == j || !dominates(a, b)))
}

fn sweep_order(candidates: &[ScoredCandidate]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&candidates[i], &candidates[j]);
        b.predicted_accuracy
            .total_cmp(&a.predicted_accuracy)
            .then(a.predicted_time.total_cmp(&b.predicted_time))
            .then(i.cmp(&j))
    });
    order
}

fn skyline<F>(candidates: &[ScoredCandidate], eligible: F, mut seen: HashSet<String>, cap: usize) -> Vec<ScoredCandidate>
where
    F: Fn(&ScoredCandidate) -> bool,
{
    let mut kept = Vec::new();
    let mut min_time = f64::INFINITY;
    for i in sweep_order(candidates) {
        if kept.len() >= cap {
            break;
        }
        let c = &candidates[i];
        if !eligible(c) || c.predicted_time >= min_time || seen.contains(&c.canonical) {
            continue;
        }
        seen.insert(c.canonical.clone());
        min_time = c.predicted_time;
        kept.push(c.clone());
    }
    kept
}

/// Two-objective skyline: sort by accuracy descending then time ascending,
/// keep a candidate when its time is below every kept time and no kept cell
/// is isomorphic to it, stop at `k` members.
pub fn pareto_front(candidates: &[ScoredCandidate], k: usize) -> Vec<ScoredCandidate> {
    skyline(candidates, |_| true, HashSet::new(), k)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationSets {
    pub ops: BTreeSet<OperatorSpec>,
    pub inputs: BTreeSet<InputRef>,
}

impl ExplorationSets {
    pub fn is_empty(&self) -> bool {
        self.ops.is_empty() && self.inputs.is_empty()
    }

    /// Occurrences of exploration operators plus exploration inputs in `cell`.
    pub fn hits(&self, cell: &CellSpec) -> usize {
        cell.operators().filter(|o| self.ops.contains(*o)).count()
            + cell.inputs().filter(|i| self.inputs.contains(i)).count()
    }
}

/// Legal input alphabet of a cell with `blocks` blocks: every lookback plus
/// every block index a last block may reference.
pub fn input_alphabet(blocks: usize, max_lookback: u32) -> Vec<InputRef> {
    (-(max_lookback as InputRef)..0)
        .chain(0..blocks.saturating_sub(1) as InputRef)
        .collect()
}

/// Operators and inputs used less than one fifth of their uniform share
/// across all blocks of the front.
pub fn build_exploration_sets(
    front: &[ScoredCandidate],
    operators: &[OperatorSpec],
    inputs: &[InputRef],
) -> ExplorationSets {
    let slots: usize = front.iter().map(|c| 2 * c.cell.len()).sum();
    if slots == 0 {
        return ExplorationSets::default();
    }
    let total = slots as f64;
    let ops = operators
        .iter()
        .filter(|o| {
            let n = front.iter().flat_map(|c| c.cell.operators()).filter(|u| u == o).count();
            (n as f64 / total) < 1.0 / (5.0 * operators.len() as f64)
        })
        .cloned()
        .collect();
    let inputs = inputs
        .iter()
        .filter(|i| {
            let n = front.iter().flat_map(|c| c.cell.inputs()).filter(|u| u == *i).count();
            (n as f64 / total) < 1.0 / (5.0 * inputs.len() as f64)
        })
        .copied()
        .collect();
    ExplorationSets { ops, inputs }
}

/// Skyline, capped at `j`, over the candidates holding enough exploration
/// elements and not isomorphic to any standard-front member.
///
/// `min_hits` applies when both sets are non-empty; with one set empty a
/// single hit suffices.
pub fn exploration_front(
    candidates: &[ScoredCandidate],
    standard_front: &[ScoredCandidate],
    sets: &ExplorationSets,
    min_hits: usize,
    j: usize,
) -> Vec<ScoredCandidate> {
    if sets.is_empty() {
        return Vec::new();
    }
    let threshold = if !sets.ops.is_empty() && !sets.inputs.is_empty() {
        min_hits
    } else {
        1
    };
    let seen = standard_front.iter().map(|c| c.canonical.clone()).collect();
    skyline(candidates, |c| sets.hits(&c.cell) >= threshold, seen, j)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(t: &str) -> OperatorSpec {
        OperatorSpec::parse(t).unwrap()
    }

    fn cand(text: &str, acc: f64, time: f64) -> ScoredCandidate {
        ScoredCandidate::new(CellSpec::parse(text).unwrap(), acc, time).unwrap()
    }

    fn scores(front: &[ScoredCandidate]) -> Vec<(f64, f64)> {
        front.iter().map(|c| (c.predicted_accuracy, c.predicted_time)).collect()
    }

    #[test]
    fn dominated_candidate_dropped() {
        let cs = vec![
            cand("[(-1, '3x3 conv', -1, '3x3 conv')]", 0.9, 10.0),
            cand("[(-1, 'identity', -1, 'identity')]", 0.8, 5.0),
            cand("[(-2, '3x3 conv', -1, 'identity')]", 0.7, 20.0),
        ];
        let front = pareto_front(&cs, 128);
        assert_eq!(scores(&front), vec![(0.9, 10.0), (0.8, 5.0)]);
        assert!(is_mutually_non_dominated(&front));
        assert_eq!(pareto_front(&cs, 1).len(), 1);
        assert!(pareto_front(&[], 4).is_empty());
    }

    #[test]
    fn isomorph_with_worse_score_is_pruned() {
        let cs = vec![
            cand("[(-1, 'identity', -2, '3x3 conv')]", 0.8, 5.0),
            cand("[(-2, '3x3 conv', -1, 'identity')]", 0.7, 4.0),
        ];
        assert_eq!(scores(&pareto_front(&cs, 8)), vec![(0.8, 5.0)]);
    }

    #[test]
    fn exact_ties_keep_earliest() {
        let cs = vec![
            cand("[(-1, 'identity', -1, 'identity')]", 0.8, 5.0),
            cand("[(-1, '3x3 conv', -1, '3x3 conv')]", 0.8, 5.0),
        ];
        let front = pareto_front(&cs, 8);
        assert_eq!(front.len(), 1);
        assert_eq!(front[0].cell, cs[0].cell);
    }

    #[test]
    fn exploration_set_thresholds() {
        // 12 operators, front of 10 three-block cells: 60 op slots, threshold 1/60
        let tokens = [
            "identity", "3x3 dconv", "5x5 dconv", "7x7 dconv", "1x3-3x1 conv", "1x5-5x1 conv",
            "1x7-7x1 conv", "1x1 conv", "3x3 conv", "5x5 conv", "2x2 maxpool", "2x2 avgpool",
        ];
        let ops: Vec<OperatorSpec> = tokens.iter().map(|t| op(t)).collect();
        let once = "[(-1, '3x3 conv', -1, '3x3 conv');(-1, '3x3 conv', -1, '3x3 conv');(-1, '3x3 conv', -1, '5x5 conv')]";
        let rest = "[(-1, '3x3 conv', -1, '3x3 conv');(-1, '3x3 conv', -1, '3x3 conv');(-1, '3x3 conv', -1, '3x3 conv')]";
        let mut front = vec![cand(once, 0.5, 1.0)];
        front.extend((0..9).map(|_| cand(rest, 0.5, 1.0)));
        let sets = build_exploration_sets(&front, &ops, &input_alphabet(3, 2));
        assert!(sets.ops.contains(&op("identity")));
        assert!(!sets.ops.contains(&op("5x5 conv")));
        assert!(!sets.ops.contains(&op("3x3 conv")));
        assert_eq!(sets.ops.len(), 10);
        // only -1 is used; alphabet {-2, -1, 0, 1}
        assert_eq!(sets.inputs, [-2, 0, 1].into_iter().collect());
    }

    #[test]
    fn uniform_usage_gives_empty_op_set() {
        let ops = vec![op("identity"), op("3x3 conv")];
        let front = vec![cand("[(-1, 'identity', -2, '3x3 conv')]", 0.5, 1.0)];
        let sets = build_exploration_sets(&front, &ops, &input_alphabet(1, 2));
        assert!(sets.is_empty());
        assert!(exploration_front(&front, &[], &sets, 2, 4).is_empty());
    }

    #[test]
    fn exploration_front_single_set_rule_and_cap() {
        let sets = ExplorationSets {
            ops: [op("5x5 conv")].into_iter().collect(),
            inputs: BTreeSet::new(),
        };
        let cs = vec![
            cand("[(-1, '5x5 conv', -1, 'identity')]", 0.6, 4.0),
            cand("[(-2, '5x5 conv', -1, 'identity')]", 0.5, 3.0),
            cand("[(-2, '5x5 conv', -2, 'identity')]", 0.4, 8.0),
            cand("[(-1, '3x3 conv', -1, 'identity')]", 0.9, 1.0),
        ];
        assert_eq!(scores(&exploration_front(&cs, &[], &sets, 2, 2)), vec![(0.6, 4.0), (0.5, 3.0)]);
        // standard-front isomorphs are excluded
        let std_front = vec![cand("[(-1, 'identity', -1, '5x5 conv')]", 0.99, 0.5)];
        assert_eq!(scores(&exploration_front(&cs, &std_front, &sets, 2, 2)), vec![(0.5, 3.0)]);
    }

    #[test]
    fn both_sets_require_min_hits() {
        let sets = ExplorationSets {
            ops: [op("5x5 conv")].into_iter().collect(),
            inputs: [-2].into_iter().collect(),
        };
        let cs = vec![
            cand("[(-1, '5x5 conv', -1, 'identity')]", 0.9, 1.0),
            cand("[(-2, '5x5 conv', -1, 'identity')]", 0.5, 3.0),
        ];
        assert_eq!(scores(&exploration_front(&cs, &[], &sets, 2, 4)), vec![(0.5, 3.0)]);
        assert_eq!(exploration_front(&cs, &[], &sets, 1, 4).len(), 1);
    }
}
