//! Stand-in trainer worker speaking the evaluation protocol over stdio.
//!
//! Results come from the synthetic oracle. Flags:
//! `--seed N`, `--image H,W,C` or `--series L,C`, `--classes N`,
//! `--die-on K` (exit without replying to the K-th evaluate),
//! `--garbage-on K` (reply with a malformed frame),
//! `--fail-cell TEXT` (worker error for that cell), `--sleep-ms MS`.

use std::io::{self, BufRead, Write};
use std::process::ExitCode;
use std::time::Duration;

use cellnas_core::cellspace::CellSpec;
use cellnas_core::evaluator::{
    error_frame, synthetic_evaluate, EvaluateReply, HelloReply, OkReply, OracleParams, PredsReply,
    WorkerRequest,
};
use cellnas_core::macroarch::{InputShape, MacroConfig};

#[derive(Default)]
struct Options {
    seed: u64,
    shape: Option<InputShape>,
    classes: Option<u32>,
    die_on: Option<usize>,
    garbage_on: Option<usize>,
    fail_cell: Option<String>,
    sleep_ms: u64,
}

fn dims(value: &str) -> Result<Vec<u32>, String> {
    value
        .split(',')
        .map(|d| d.trim().parse::<u32>().map_err(|e| format!("bad dimension `{d}`: {e}")))
        .collect()
}

fn parse_args() -> Result<Options, String> {
    let mut opts = Options::default();
    let mut args = std::env::args().skip(1);
    while let Some(flag) = args.next() {
        let value = args.next().ok_or_else(|| format!("{flag} needs a value"))?;
        let num = |v: &str| v.parse::<u64>().map_err(|e| format!("{flag}: {e}"));
        match flag.as_str() {
            "--seed" => opts.seed = num(&value)?,
            "--classes" => opts.classes = Some(num(&value)? as u32),
            "--die-on" => opts.die_on = Some(num(&value)? as usize),
            "--garbage-on" => opts.garbage_on = Some(num(&value)? as usize),
            "--sleep-ms" => opts.sleep_ms = num(&value)?,
            "--fail-cell" => opts.fail_cell = Some(value),
            "--image" => match dims(&value)?.as_slice() {
                [h, w, c] => opts.shape = Some(InputShape::image(*h, *w, *c)),
                _ => return Err("--image takes H,W,C".into()),
            },
            "--series" => match dims(&value)?.as_slice() {
                [l, c] => opts.shape = Some(InputShape::series(*l, *c)),
                _ => return Err("--series takes L,C".into()),
            },
            _ => return Err(format!("unknown flag {flag}")),
        }
    }
    Ok(opts)
}

fn main() -> ExitCode {
    let opts = match parse_args() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("mock-worker: {e}");
            return ExitCode::from(1);
        }
    };
    let oracle = OracleParams::default();
    let shape = opts.shape.clone().unwrap_or_else(|| InputShape::image(32, 32, 3));
    let classes = opts.classes.unwrap_or(10);
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut evaluations = 0usize;
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let request: WorkerRequest = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_u64()))
                    .unwrap_or(0);
                let _ = writeln!(out, "{}", error_frame(id, "bad_request", &e.to_string()));
                let _ = out.flush();
                continue;
            }
        };
        let reply = match request {
            WorkerRequest::Hello { id, .. } => serde_json::to_string(&HelloReply {
                id,
                ok: true,
                worker: "mock-worker".into(),
            })
            .expect("reply"),
            WorkerRequest::Evaluate {
                id,
                cell,
                macro_frame,
                ..
            } => {
                evaluations += 1;
                if opts.die_on == Some(evaluations) {
                    eprintln!("mock-worker: simulated crash on evaluation {evaluations}");
                    return ExitCode::from(3);
                }
                if opts.sleep_ms > 0 {
                    std::thread::sleep(Duration::from_millis(opts.sleep_ms));
                }
                if opts.garbage_on == Some(evaluations) {
                    "{not json".to_string()
                } else if opts.fail_cell.as_deref() == Some(cell.as_str()) {
                    error_frame(id, "training_failed", "configured failure")
                } else {
                    let macro_cfg = MacroConfig {
                        motifs: macro_frame.motifs,
                        normals_per_motif: macro_frame.normals,
                        filters: macro_frame.filters,
                        max_lookback: macro_frame.lookback,
                        residual_cells: macro_frame.residual,
                        input_shape: shape.clone(),
                        num_classes: classes,
                        last_reduction: false,
                    };
                    match CellSpec::parse(&cell)
                        .map_err(|e| e.to_string())
                        .and_then(|c| synthetic_evaluate(&c, &macro_cfg, &oracle, opts.seed).map_err(|e| e.to_string()))
                    {
                        Ok(r) => serde_json::to_string(&EvaluateReply {
                            id,
                            accuracy: r.accuracy,
                            time_s: r.time_s,
                            params: r.params,
                        })
                        .expect("reply"),
                        Err(e) => error_frame(id, "bad_cell", &e),
                    }
                }
            }
            WorkerRequest::FitAcc { id, .. } => serde_json::to_string(&OkReply { id, ok: true }).expect("reply"),
            WorkerRequest::PredictAcc { id, cells } => {
                let macro_cfg = MacroConfig {
                    motifs: 3,
                    normals_per_motif: 2,
                    filters: 24,
                    max_lookback: 2,
                    residual_cells: true,
                    input_shape: shape.clone(),
                    num_classes: classes,
                    last_reduction: false,
                };
                let preds: Result<Vec<f64>, String> = cells
                    .iter()
                    .map(|t| {
                        let c = CellSpec::parse(t).map_err(|e| e.to_string())?;
                        synthetic_evaluate(&c, &macro_cfg, &oracle, opts.seed)
                            .map(|r| r.accuracy)
                            .map_err(|e| e.to_string())
                    })
                    .collect();
                match preds {
                    Ok(preds) => serde_json::to_string(&PredsReply { id, preds }).expect("reply"),
                    Err(e) => error_frame(id, "bad_cell", &e),
                }
            }
            WorkerRequest::Shutdown { .. } => break,
        };
        if writeln!(out, "{reply}").and_then(|_| out.flush()).is_err() {
            break;
        }
    }
    ExitCode::SUCCESS
}
