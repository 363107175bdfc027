//! The search loop: bootstrap on the empty and one-block cells, then grow
//! cells one block per step, guided by time and accuracy predictors and
//! Pareto selection. Every evaluation is journaled so a run can resume.

mod quality;
mod rundir;

pub use quality::{report_predictor_quality, StepQuality};
pub use rundir::{read_step_csv, CandidateRecord, PlanEntry, RunDir, SearchState, StepPlan, StepRow, STEP_CSV_HEADER};

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::cellspace::{canonical_form, expand_cell, BlockSpec, CellError, CellSpec, OperatorSpec};
use crate::config::{AccuracyPredictorKind, Config, ConfigError, EvaluatorSpec, SearchMode};
use crate::evaluator::{EvaluationRequest, Evaluator, EvaluatorError, SyntheticEvaluator, WorkerBridge};
use crate::macroarch::MacroConfig;
use crate::pareto::{build_exploration_sets, exploration_front, input_alphabet, is_mutually_non_dominated, pareto_front, ScoredCandidate};
use crate::surrogate::{
    compute_dynamic_reindex, fit_accuracy_default, CellEncoder, DynamicReindexMap, SurrogateError, TimePredictor,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Evaluator(#[from] EvaluatorError),
    #[error("aborting after {failures} consecutive failed evaluations; last error: {last}")]
    FailureStreak { failures: usize, last: String },
    #[error("bootstrap failed: {0}")]
    Bootstrap(String),
    #[error("corrupt run state: {0}")]
    CorruptState(String),
    #[error("run directory `{0}` already holds a run")]
    AlreadyExists(String),
}

#[derive(Debug, Clone, Default)]
pub struct SearchOptions {
    /// Return after completing this step, leaving the run resumable.
    pub stop_after_step: Option<usize>,
    /// Print one progress line per step to stderr.
    pub progress: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub run_dir: PathBuf,
    pub completed_steps: usize,
    pub finished: bool,
    /// Successful evaluations per step, index = step.
    pub evaluations_per_step: Vec<usize>,
}

impl SearchOutcome {
    pub fn total_evaluations(&self) -> usize {
        self.evaluations_per_step.iter().sum()
    }
}

/// Builds the evaluator a config names.
pub fn make_evaluator(config: &Config) -> Result<Box<dyn Evaluator>, EngineError> {
    Ok(match &config.evaluator {
        EvaluatorSpec::Synthetic { oracle } => Box::new(SyntheticEvaluator::new(oracle.clone(), config.search.seed)),
        spec @ EvaluatorSpec::External { .. } => {
            Box::new(WorkerBridge::spawn(&spec.bridge_options().expect("external spec"))?)
        }
    })
}

/// Starts a new run in `run_dir`.
pub fn run_search(
    config: &Config,
    run_dir: &Path,
    evaluator: &mut dyn Evaluator,
    options: &SearchOptions,
) -> Result<SearchOutcome, EngineError> {
    config.validate()?;
    let rd = RunDir::new(run_dir);
    rd.create(config)?;
    drive(&rd, config, evaluator, options)
}

/// Continues an interrupted run from its first incomplete step.
pub fn resume_search(
    run_dir: &Path,
    evaluator: &mut dyn Evaluator,
    options: &SearchOptions,
) -> Result<SearchOutcome, EngineError> {
    let rd = RunDir::new(run_dir);
    let config = rd.load_config()?;
    drive(&rd, &config, evaluator, options)
}

/// Like [`resume_search`], refusing a run frozen with a different config.
pub fn resume_search_with(
    config: &Config,
    run_dir: &Path,
    evaluator: &mut dyn Evaluator,
    options: &SearchOptions,
) -> Result<SearchOutcome, EngineError> {
    let rd = RunDir::new(run_dir);
    let frozen = rd.load_config()?;
    if frozen.hash() != config.hash() {
        return Err(EngineError::CorruptState("config hash differs from the frozen run config".into()));
    }
    drive(&rd, &frozen, evaluator, options)
}

/// Seed of a per-step, per-purpose random stream.
fn step_seed(seed: u64, step: usize, salt: u64) -> u64 {
    let mut z = seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Ctx<'a> {
    rd: &'a RunDir,
    config: &'a Config,
    ops: Vec<OperatorSpec>,
    macro_cfg: MacroConfig,
    records: BTreeMap<usize, Vec<CandidateRecord>>,
    options: &'a SearchOptions,
}

impl Ctx<'_> {
    fn successes(&self, step: usize) -> impl Iterator<Item = &CandidateRecord> {
        self.records
            .get(&step)
            .into_iter()
            .flatten()
            .filter(|r| r.result.is_some())
    }

    fn successes_before(&self, step: usize) -> Vec<&CandidateRecord> {
        (0..step).flat_map(|s| self.successes(s)).collect()
    }

    fn outcome(&self, completed: usize, finished: bool) -> SearchOutcome {
        SearchOutcome {
            run_dir: self.rd.root.clone(),
            completed_steps: completed,
            finished,
            evaluations_per_step: (0..completed).map(|s| self.successes(s).count()).collect(),
        }
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.options.progress {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn drive(
    rd: &RunDir,
    config: &Config,
    evaluator: &mut dyn Evaluator,
    options: &SearchOptions,
) -> Result<SearchOutcome, EngineError> {
    let mut state = rd.load_state()?;
    if state.config_hash != config.hash() {
        return Err(EngineError::CorruptState("state.json belongs to a different config".into()));
    }
    let mut ctx = Ctx {
        rd,
        config,
        ops: config.operators()?,
        macro_cfg: config.macro_config(),
        records: BTreeMap::new(),
        options,
    };
    for r in rd.read_journal()? {
        ctx.records.entry(r.step).or_default().push(r);
    }
    let last_step = config.search.max_blocks;
    if state.finished {
        return Ok(ctx.outcome(last_step + 1, true));
    }
    let mut reindex = None;
    for step in state.completed_steps..=last_step {
        if step >= 2 && reindex.is_none() && config.search.mode == SearchMode::Popnas {
            reindex = Some(build_reindex(&ctx)?);
        }
        let plan = match state.plan.take() {
            Some(p) if p.step == step => p,
            _ => {
                let p = StepPlan {
                    step,
                    entries: plan_step(&ctx, step, reindex.as_ref(), evaluator)?,
                };
                state.plan = Some(p.clone());
                rd.save_state(&state)?;
                p
            }
        };
        state.plan = Some(plan.clone());
        evaluate_plan(&mut ctx, &plan, evaluator)?;
        if step == 0 && ctx.successes(0).next().is_none() {
            return Err(EngineError::Bootstrap("the empty cell could not be evaluated".into()));
        }
        rd.write_step_csv(step, ctx.records.get(&step).map(Vec::as_slice).unwrap_or(&[]))?;
        if step == 1 && config.search.mode == SearchMode::Popnas {
            let map = build_reindex(&ctx)?;
            rd.write_json(&rd.reindex_path(), &map)?;
            reindex = Some(map);
        }
        state.completed_steps = step + 1;
        state.plan = None;
        state.finished = step == last_step;
        rd.save_state(&state)?;
        ctx.log(format!(
            "step {step}: {} planned, {} evaluated",
            plan.entries.len(),
            ctx.successes(step).count()
        ));
        if options.stop_after_step == Some(step) && !state.finished {
            return Ok(ctx.outcome(step + 1, false));
        }
    }
    Ok(ctx.outcome(last_step + 1, true))
}

/// Reindex from the empty cell and the symmetric one-block cells.
fn build_reindex(ctx: &Ctx) -> Result<DynamicReindexMap, EngineError> {
    let t0 = ctx
        .successes(0)
        .next()
        .and_then(|r| r.result)
        .map(|r| r.time_s)
        .ok_or_else(|| EngineError::Bootstrap("missing empty-cell time".into()))?;
    let by_form: BTreeMap<&str, f64> = ctx
        .successes(1)
        .map(|r| (r.entry.canonical.as_str(), r.result.expect("success").time_s))
        .collect();
    let mut symmetric = BTreeMap::new();
    for op in &ctx.ops {
        let sym = CellSpec::from_blocks(vec![BlockSpec::new(-1, op.clone(), -1, op.clone())])?;
        if let Some(t) = by_form.get(canonical_form(&sym)?.as_str()) {
            symmetric.insert(op.token(), *t);
        }
    }
    // an operator whose symmetric cell failed is estimated additively from
    // the mixed one-block cells it appears in: t(o,o) ~ 2 t(o,p) - t(p,p)
    let mut times = Vec::new();
    for op in &ctx.ops {
        if let Some(t) = symmetric.get(op.token()) {
            times.push((op, *t));
            continue;
        }
        let estimates: Vec<f64> = ctx
            .successes(1)
            .filter_map(|r| {
                let [a, b] = r.entry.cell.blocks()[0].operators();
                let other = if a == op { b } else if b == op { a } else { return None };
                symmetric.get(other.token()).map(|t| 2.0 * r.result.expect("success").time_s - t)
            })
            .collect();
        if !estimates.is_empty() {
            times.push((op, estimates.iter().sum::<f64>() / estimates.len() as f64));
        }
    }
    Ok(compute_dynamic_reindex(t0, times)?)
}

fn plan_step(
    ctx: &Ctx,
    step: usize,
    reindex: Option<&DynamicReindexMap>,
    evaluator: &mut dyn Evaluator,
) -> Result<Vec<PlanEntry>, EngineError> {
    let cfg = &ctx.config.search;
    let entry = |cell: CellSpec, canonical: String| PlanEntry {
        cell,
        canonical,
        pred_accuracy: None,
        pred_time_s: None,
        exploration: false,
    };
    if step == 0 {
        let cell = CellSpec::empty();
        let canonical = canonical_form(&cell)?;
        return Ok(vec![entry(cell, canonical)]);
    }
    // expand every evaluated parent, deduplicating by canonical form
    let parents: Vec<&CellSpec> = ctx.successes(step - 1).map(|r| &r.entry.cell).collect();
    let children: Vec<Vec<(CellSpec, String)>> = parents
        .par_iter()
        .map(|p| {
            expand_cell(p, &ctx.ops, cfg.max_lookback, cfg.max_blocks)?
                .into_iter()
                .map(|c| canonical_form(&c).map(|f| (c, f)))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, CellError>>()?;
    let mut seen = HashSet::new();
    let mut candidates = Vec::new();
    for (parent_index, group) in children.into_iter().enumerate() {
        let mut local = HashSet::new();
        for (cell, form) in group {
            let fresh = if cfg.cross_parent_dedup {
                seen.insert(form.clone())
            } else {
                local.insert(form.clone())
            };
            if fresh {
                candidates.push((parent_index, cell, form));
            }
        }
    }
    if step == 1 {
        return Ok(candidates.into_iter().map(|(_, c, f)| entry(c, f)).collect());
    }
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let history = ctx.successes_before(step);
    let cells: Vec<CellSpec> = candidates.iter().map(|(_, c, _)| c.clone()).collect();

    let acc_rows: Vec<(CellSpec, f64)> = history
        .iter()
        .map(|r| (r.entry.cell.clone(), r.result.expect("success").accuracy))
        .collect();
    let pred_acc: Vec<f64> = match cfg.accuracy_predictor {
        AccuracyPredictorKind::Gbdt => {
            let encoder = CellEncoder::new(&ctx.ops, cfg.max_blocks, cfg.max_lookback);
            let model = fit_accuracy_default(&acc_rows, &encoder, &cfg.predictor, step_seed(cfg.seed, step, 1))?;
            ctx.rd
                .write_text(&ctx.rd.predictor_path(step, "accuracy"), &model.to_dump())?;
            cells
                .par_iter()
                .map(|c| model.predict(c))
                .collect::<Result<_, _>>()?
        }
        AccuracyPredictorKind::Worker => {
            evaluator.fit_accuracy(&acc_rows)?;
            evaluator.predict_accuracy(&cells)?
        }
    };

    let entries = match cfg.mode {
        SearchMode::Pnas => {
            let mut order: Vec<usize> = (0..cells.len()).collect();
            order.sort_by(|&i, &j| pred_acc[j].total_cmp(&pred_acc[i]).then(i.cmp(&j)));
            let mut kept = HashSet::new();
            order
                .into_iter()
                .filter(|&i| kept.insert(candidates[i].2.clone()))
                .take(cfg.beam)
                .map(|i| PlanEntry {
                    pred_accuracy: Some(pred_acc[i]),
                    ..entry(cells[i].clone(), candidates[i].2.clone())
                })
                .collect()
        }
        SearchMode::Popnas => {
            let reindex = reindex.ok_or_else(|| EngineError::Bootstrap("missing dynamic reindex".into()))?;
            let time_rows: Vec<(CellSpec, f64)> = history
                .iter()
                .map(|r| (r.entry.cell.clone(), r.result.expect("success").time_s))
                .collect();
            let time_model =
                TimePredictor::fit(&time_rows, &ctx.macro_cfg, reindex, &cfg.predictor, step_seed(cfg.seed, step, 2))?;
            ctx.rd
                .write_text(&ctx.rd.predictor_path(step, "time"), &time_model.model.to_dump())?;
            let pred_time: Vec<f64> = cells
                .par_iter()
                .map(|c| time_model.predict(c))
                .collect::<Result<_, _>>()?;
            let scored: Vec<ScoredCandidate> = candidates
                .iter()
                .enumerate()
                .map(|(i, (_, c, f))| ScoredCandidate::with_canonical(c.clone(), pred_acc[i], pred_time[i], f.clone()))
                .collect();
            let front = pareto_front(&scored, cfg.beam);
            debug_assert!(is_mutually_non_dominated(&front));
            let sets = build_exploration_sets(&front, &ctx.ops, &input_alphabet(step, cfg.max_lookback));
            let explore = if cfg.exploration_beam > 0 && !sets.is_empty() {
                exploration_front(&scored, &front, &sets, cfg.exploration_min_hits, cfg.exploration_beam)
            } else {
                Vec::new()
            };
            let as_entry = |c: &ScoredCandidate, exploration: bool| PlanEntry {
                cell: c.cell.clone(),
                canonical: c.canonical().to_string(),
                pred_accuracy: Some(c.predicted_accuracy),
                pred_time_s: Some(c.predicted_time),
                exploration,
            };
            front
                .iter()
                .map(|c| as_entry(c, false))
                .chain(explore.iter().map(|c| as_entry(c, true)))
                .collect()
        }
    };
    Ok(entries)
}

fn evaluate_plan(ctx: &mut Ctx, plan: &StepPlan, evaluator: &mut dyn Evaluator) -> Result<(), EngineError> {
    let done: HashSet<String> = ctx
        .records
        .get(&plan.step)
        .into_iter()
        .flatten()
        .map(|r| r.entry.canonical.clone())
        .collect();
    let evaluated_elsewhere: HashSet<&str> = ctx
        .records
        .iter()
        .filter(|(s, _)| **s != plan.step)
        .flat_map(|(_, rs)| rs.iter().map(|r| r.entry.canonical.as_str()))
        .collect();
    if let Some(dup) = plan
        .entries
        .iter()
        .find(|e| evaluated_elsewhere.contains(e.canonical.as_str()))
    {
        return Err(EngineError::CorruptState(format!("cell {} planned twice", dup.cell)));
    }
    let limit = ctx.config.search.max_failure_streak;
    let mut streak: Vec<CandidateRecord> = Vec::new();
    for entry in plan.entries.iter().filter(|e| !done.contains(&e.canonical)) {
        let request = EvaluationRequest {
            cell: entry.cell.clone(),
            macro_cfg: ctx.macro_cfg.clone(),
            training: ctx.config.training.clone(),
            dataset: ctx.config.dataset.clone(),
        };
        let mut record = CandidateRecord {
            step: plan.step,
            entry: entry.clone(),
            result: None,
            error: None,
        };
        match evaluator.evaluate(&request) {
            Ok(result) => {
                record.result = Some(result);
                streak.push(record);
                ctx.rd.append_journal(&streak)?;
                ctx.records.entry(plan.step).or_default().append(&mut streak);
            }
            Err(e) => {
                ctx.log(format!("evaluation of {} failed: {e}", entry.cell));
                record.error = Some(e.to_string());
                streak.push(record);
                if streak.len() > limit {
                    // the streak stays out of the journal so a resume retries it
                    return Err(EngineError::FailureStreak {
                        failures: streak.len(),
                        last: e.to_string(),
                    });
                }
            }
        }
    }
    // the empty cell is retried on resume instead of being recorded as failed
    if plan.step > 0 {
        ctx.rd.append_journal(&streak)?;
        ctx.records.entry(plan.step).or_default().append(&mut streak);
    }
    Ok(())
}
