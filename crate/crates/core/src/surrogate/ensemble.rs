use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gbdt::{bad_dump, key_values, parse_field, BoostParams, Booster};
use super::SurrogateError;

/// Hyperparameters of one boosted-tree configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressorConfig {
    pub learning_rate: f64,
    pub depth: usize,
    pub l2_leaf_reg: f64,
    pub subsample: f64,
    pub iterations: usize,
    pub early_stop_patience: usize,
    pub folds: usize,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            depth: 5,
            l2_leaf_reg: 1.0,
            subsample: 1.0,
            iterations: 2500,
            early_stop_patience: 50,
            folds: 5,
        }
    }
}

/// Ranges sampled by the random hyperparameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub learning_rate: (f64, f64),
    /// Inclusive lower, exclusive upper bound.
    pub depth: (usize, usize),
    pub l2_leaf_reg: (f64, f64),
    pub subsample: (f64, f64),
    pub iterations: usize,
    pub early_stop_patience: usize,
    pub folds: usize,
    pub trials: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            learning_rate: (0.02, 0.2),
            depth: (3, 7),
            l2_leaf_reg: (0.1, 5.0),
            subsample: (0.5, 1.0),
            iterations: 2500,
            early_stop_patience: 50,
            folds: 5,
            trials: 8,
        }
    }
}

impl SearchSpace {
    fn sample(&self, rng: &mut ChaCha8Rng) -> RegressorConfig {
        let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            if hi > lo {
                rng.gen_range(lo..hi)
            } else {
                lo
            }
        };
        RegressorConfig {
            learning_rate: uniform(rng, self.learning_rate),
            depth: if self.depth.1 > self.depth.0 {
                rng.gen_range(self.depth.0..self.depth.1)
            } else {
                self.depth.0
            },
            l2_leaf_reg: uniform(rng, self.l2_leaf_reg),
            subsample: uniform(rng, self.subsample),
            iterations: self.iterations,
            early_stop_patience: self.early_stop_patience,
            folds: self.folds,
        }
    }
}

/// Mean of the per-fold boosted models of the selected configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub config: RegressorConfig,
    pub models: Vec<Booster>,
    pub n_features: usize,
    /// Mean held-out RMSE of the selected configuration.
    pub cv_rmse: f64,
}

fn boost_params(c: &RegressorConfig) -> BoostParams {
    BoostParams {
        learning_rate: c.learning_rate,
        depth: c.depth,
        l2_leaf_reg: c.l2_leaf_reg,
        subsample: c.subsample,
        iterations: c.iterations,
        early_stop_patience: c.early_stop_patience,
        min_samples_leaf: 1,
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic assignment of rows to folds (row -> fold), leave-one-out
/// when there are fewer rows than folds.
fn fold_assignment(n: usize, folds: usize, seed: u64) -> (usize, Vec<usize>) {
    let k = folds.clamp(2, n.max(2)).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xF01D, 0));
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut assignment = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        assignment[row] = pos % k;
    }
    (k, assignment)
}

struct FoldFit {
    model: Booster,
    score: f64,
}

fn fit_folds(
    rows: &[Vec<f64>],
    targets: &[f64],
    config: &RegressorConfig,
    k: usize,
    assignment: &[usize],
    seed: u64,
    trial: u64,
) -> Result<Vec<FoldFit>, SurrogateError> {
    let params = boost_params(config);
    (0..k)
        .into_par_iter()
        .map(|fold| {
            let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for (i, row) in rows.iter().enumerate() {
                if assignment[i] == fold {
                    vx.push(row.clone());
                    vy.push(targets[i]);
                } else {
                    tx.push(row.clone());
                    ty.push(targets[i]);
                }
            }
            let (model, score) = Booster::fit(&tx, &ty, &vx, &vy, &params, mix(seed, trial, fold as u64))?;
            Ok(FoldFit { model, score })
        })
        .collect()
}

/// Random-search K-fold fit of a boosted-tree ensemble.
///
/// Each of `space.trials` sampled configurations trains one model per fold,
/// early-stopped on that fold's held-out rows. The configuration with the
/// lowest mean held-out RMSE wins; its fold models form the ensemble.
pub fn fit_regressor(
    rows: &[Vec<f64>],
    targets: &[f64],
    space: &SearchSpace,
    seed: u64,
) -> Result<EnsembleModel, SurrogateError> {
    if rows.len() < 2 || rows.len() != targets.len() {
        return Err(SurrogateError::InsufficientData {
            rows: rows.len().min(targets.len()),
            needed: 2,
        });
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(SurrogateError::NonFiniteTarget);
    }
    let n_features = rows[0].len();
    if rows.iter().any(|r| r.len() != n_features) {
        return Err(SurrogateError::RaggedRows);
    }
    let (k, assignment) = fold_assignment(rows.len(), space.folds, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5EA2C, 1));
    let configs: Vec<RegressorConfig> = (0..space.trials.max(1)).map(|_| space.sample(&mut rng)).collect();
    let fits: Vec<Vec<FoldFit>> = configs
        .par_iter()
        .enumerate()
        .map(|(t, c)| fit_folds(rows, targets, c, k, &assignment, seed, t as u64))
        .collect::<Result<_, _>>()?;

    let mut best: Option<(usize, f64)> = None;
    for (t, folds) in fits.iter().enumerate() {
        let mean = folds.iter().map(|f| f.score).sum::<f64>() / folds.len() as f64;
        if best.is_none_or(|(_, s)| mean < s) {
            best = Some((t, mean));
        }
    }
    let (winner, cv_rmse) = best.expect("at least one trial");
    let mut config = configs[winner];
    config.folds = k;
    let models = fits.into_iter().nth(winner).unwrap().into_iter().map(|f| f.model).collect();
    Ok(EnsembleModel {
        config,
        models,
        n_features,
        cv_rmse,
    })
}

impl EnsembleModel {
    pub fn fold_predictions(&self, x: &[f64]) -> Vec<f64> {
        self.models.iter().map(|m| m.predict(x)).collect()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let preds = self.fold_predictions(x);
        // offset from the first fold keeps identical fold outputs exact
        let first = preds[0];
        first + preds.iter().map(|p| p - first).sum::<f64>() / preds.len() as f64
    }

    /// Plain-text dump; `from_dump` restores a bit-identical model.
    pub fn to_dump(&self) -> String {
        use std::fmt::Write;
        let c = &self.config;
        let mut out = String::from("gbdt-ensemble v1\n");
        let _ = writeln!(
            out,
            "config learning_rate={} depth={} l2_leaf_reg={} subsample={} iterations={} early_stop_patience={} folds={}",
            c.learning_rate, c.depth, c.l2_leaf_reg, c.subsample, c.iterations, c.early_stop_patience, c.folds
        );
        let _ = writeln!(
            out,
            "ensemble models={} features={} cv_rmse={}",
            self.models.len(),
            self.n_features,
            self.cv_rmse
        );
        for m in &self.models {
            m.write_dump(&mut out);
        }
        out.push_str("end\n");
        out
    }

    pub fn from_dump(text: &str) -> Result<Self, SurrogateError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, "gbdt-ensemble v1")) => {}
            _ => return Err(bad_dump(1, "missing `gbdt-ensemble v1` header")),
        }
        let (no, line) = lines.next().ok_or_else(|| bad_dump(2, "missing config"))?;
        let f = key_values(line, "config").ok_or_else(|| bad_dump(no, "expected `config`"))?;
        let config = RegressorConfig {
            learning_rate: parse_field(&f, "learning_rate", no)?,
            depth: parse_field(&f, "depth", no)?,
            l2_leaf_reg: parse_field(&f, "l2_leaf_reg", no)?,
            subsample: parse_field(&f, "subsample", no)?,
            iterations: parse_field(&f, "iterations", no)?,
            early_stop_patience: parse_field(&f, "early_stop_patience", no)?,
            folds: parse_field(&f, "folds", no)?,
        };
        let (no, line) = lines.next().ok_or_else(|| bad_dump(3, "missing ensemble header"))?;
        let f = key_values(line, "ensemble").ok_or_else(|| bad_dump(no, "expected `ensemble`"))?;
        let count: usize = parse_field(&f, "models", no)?;
        let n_features: usize = parse_field(&f, "features", no)?;
        let cv_rmse: f64 = parse_field(&f, "cv_rmse", no)?;
        if count == 0 {
            return Err(bad_dump(no, "ensemble without models"));
        }
        let models = (0..count)
            .map(|_| Booster::read_dump(&mut lines, n_features))
            .collect::<Result<Vec<_>, _>>()?;
        match lines.next() {
            Some((_, "end")) => {}
            other => return Err(bad_dump(other.map_or(0, |(n, _)| n), "expected `end`")),
        }
        Ok(Self {
            config,
            models,
            n_features,
            cv_rmse,
        })
    }
}
