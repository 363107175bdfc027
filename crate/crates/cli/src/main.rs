use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cellnas_core::cellspace::{cell_to_dot, CellSpec};
use cellnas_core::config::load_config;
use cellnas_core::engine::{
    make_evaluator, report_predictor_quality, resume_search_with, run_search, RunDir, SearchOptions, StepRow,
};
use cellnas_core::modelselect::{run_final_training, run_model_selection, SelectionConfig};
use cellnas_core::surrogate::PredictionScore;

/// Cell-based multi-objective architecture search.
#[derive(Parser)]
#[command(name = "cellnas", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) a search.
    Search {
        #[arg(long)]
        config: PathBuf,
        /// Run directory; defaults to runs/<config hash prefix>.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        resume: bool,
    },
    /// Re-train the best cells over macro variants.
    Select {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, requires = "params_max")]
        params_min: Option<u64>,
        #[arg(long, requires = "params_min")]
        params_max: Option<u64>,
    },
    /// Train the selected architecture on all data.
    Final {
        #[arg(long)]
        run: PathBuf,
    },
    /// Print step results as tables.
    Inspect {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        step: Option<usize>,
    },
    /// Emit a Graphviz graph of a cell.
    ExportDot {
        #[arg(long)]
        cell: String,
        /// Macro shape as M,N,F, shown in the graph label.
        #[arg(long = "macro", value_parser = parse_shape)]
        macro_shape: Option<(u32, u32, u32)>,
    },
    /// Per-step MAPE and Spearman of both predictors.
    ScorePredictors {
        #[arg(long)]
        run: PathBuf,
    },
}

fn parse_shape(text: &str) -> Result<(u32, u32, u32), String> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let [m, n, f] = parts.as_slice() else {
        return Err("expected M,N,F".into());
    };
    let num = |s: &str| s.parse::<u32>().map_err(|_| format!("`{s}` is not a non-negative integer"));
    Ok((num(m)?, num(n)?, num(f)?))
}

enum Failure {
    Usage(String),
    Runtime(String),
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn search(config: &Path, out: Option<PathBuf>, resume: bool) -> Result<(), Failure> {
    let config = load_config(config).map_err(|e| Failure::Usage(e.to_string()))?;
    let out = out.unwrap_or_else(|| Path::new("runs").join(&config.hash()[..12]));
    let mut eval = make_evaluator(&config).map_err(runtime)?;
    let options = SearchOptions {
        stop_after_step: None,
        progress: true,
    };
    let outcome = if resume {
        resume_search_with(&config, &out, &mut eval, &options)
    } else {
        run_search(&config, &out, &mut eval, &options)
    }
    .map_err(runtime)?;
    println!("run directory: {}", outcome.run_dir.display());
    for (step, n) in outcome.evaluations_per_step.iter().enumerate() {
        println!("b={step}: {n} networks");
    }
    println!("total: {} networks", outcome.total_evaluations());
    Ok(())
}

fn select(run: &Path, k: Option<usize>, range: Option<(u64, u64)>) -> Result<(), Failure> {
    let config = RunDir::new(run).load_config().map_err(runtime)?;
    let mut cfg = SelectionConfig::from_config(&config);
    if let Some(k) = k {
        if k == 0 {
            return Err(Failure::Usage("--k must be at least 1".into()));
        }
        cfg.top_k = k;
    }
    if let Some((lo, hi)) = range {
        if lo >= hi {
            return Err(Failure::Usage("--params-max must exceed --params-min".into()));
        }
        cfg.params_range = Some((lo, hi));
    }
    let mut eval = make_evaluator(&config).map_err(runtime)?;
    let out = run_model_selection(run, &cfg, &mut eval).map_err(runtime)?;
    println!("{:<60} {:>3} {:>3} {:>4} {:>10} {:>9} {:>10}", "cell", "M", "N", "F", "params", "accuracy", "time_s");
    for r in &out.evaluations {
        let (acc, time) = match &r.result {
            Some(res) => (format!("{:.4}", res.accuracy), format!("{:.2}", res.time_s)),
            None => ("failed".into(), "-".into()),
        };
        println!(
            "{:<60} {:>3} {:>3} {:>4} {:>10} {:>9} {:>10}",
            r.cell.to_string(),
            r.shape.motifs,
            r.shape.normals,
            r.shape.filters,
            r.params,
            acc,
            time
        );
    }
    let b = &out.best;
    println!("best: {} M={} N={} F={}", b.cell, b.shape.motifs, b.shape.normals, b.shape.filters);
    Ok(())
}

fn final_training(run: &Path) -> Result<(), Failure> {
    let config = RunDir::new(run).load_config().map_err(runtime)?;
    let mut eval = make_evaluator(&config).map_err(runtime)?;
    let record = run_final_training(run, &mut eval).map_err(runtime)?;
    println!(
        "{} M={} N={} F={}: accuracy {:.4}, time {:.2}s, {} params",
        record.cell, record.shape.motifs, record.shape.normals, record.shape.filters,
        record.result.accuracy, record.result.time_s, record.result.params
    );
    Ok(())
}

fn print_rows(step: usize, rows: &[StepRow]) {
    let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
    println!("step b={step} ({} networks)", rows.len());
    println!(
        "  {:<70} {:>9} {:>9} {:>9} {:>9} {:>10} {:>4}",
        "cell", "accuracy", "pred_acc", "time_s", "pred_t", "params", "exp"
    );
    for r in rows {
        println!(
            "  {:<70} {:>9.4} {:>9} {:>9.2} {:>9} {:>10} {:>4}",
            r.cell.to_string(),
            r.accuracy,
            opt(r.pred_accuracy, 4),
            r.time_s,
            opt(r.pred_time_s, 2),
            r.params,
            if r.exploration { "yes" } else { "" }
        );
    }
}

fn inspect(run: &Path, step: Option<usize>) -> Result<(), Failure> {
    let rd = RunDir::new(run);
    let steps = match step {
        Some(s) => vec![s],
        None => rd.steps_on_disk(),
    };
    if steps.is_empty() {
        return Err(Failure::Runtime(format!("no step results in {}", run.display())));
    }
    for s in steps {
        let rows = rd.read_step_csv(s).map_err(runtime)?;
        print_rows(s, &rows);
    }
    Ok(())
}

fn export_dot(cell: &str, shape: Option<(u32, u32, u32)>) -> Result<(), Failure> {
    let cell = CellSpec::parse(cell).map_err(|e| Failure::Usage(format!("--cell: {e}")))?;
    let title = shape.map(|(m, n, f)| format!("{cell} M={m} N={n} F={f}"));
    print!("{}", cell_to_dot(&cell, title.as_deref()));
    Ok(())
}

fn score_predictors(run: &Path) -> Result<(), Failure> {
    let report = report_predictor_quality(run).map_err(runtime)?;
    let cell = |s: &Option<PredictionScore>| match s {
        Some(p) => (format!("{:.2}", p.mape), format!("{:.3}", p.spearman)),
        None => ("undefined".into(), "undefined".into()),
    };
    println!("{:>4} {:>6} {:>12} {:>12} {:>12} {:>12}", "b", "n", "time MAPE%", "time rho", "acc MAPE%", "acc rho");
    for q in &report {
        let (tm, tr) = cell(&q.time);
        let (am, ar) = cell(&q.accuracy);
        println!("{:>4} {:>6} {:>12} {:>12} {:>12} {:>12}", q.step, q.evaluated, tm, tr, am, ar);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Search { config, out, resume } => search(&config, out, resume),
        Command::Select {
            run,
            k,
            params_min,
            params_max,
        } => select(&run, k, params_min.zip(params_max)),
        Command::Final { run } => final_training(&run),
        Command::Inspect { run, step } => inspect(&run, step),
        Command::ExportDot { cell, macro_shape } => export_dot(&cell, macro_shape),
        Command::ScorePredictors { run } => score_predictors(&run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
