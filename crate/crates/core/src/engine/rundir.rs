use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::cellspace::CellSpec;
use crate::config::Config;
use crate::evaluator::EvaluationResult;

pub const STEP_CSV_HEADER: [&str; 8] = [
    "cell",
    "blocks",
    "pred_accuracy",
    "pred_time_s",
    "accuracy",
    "time_s",
    "params",
    "exploration",
];

/// A cell scheduled for evaluation at some step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub cell: CellSpec,
    pub canonical: String,
    pub pred_accuracy: Option<f64>,
    pub pred_time_s: Option<f64>,
    pub exploration: bool,
}

/// A journaled evaluation: the plan entry plus its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub step: usize,
    #[serde(flatten)]
    pub entry: PlanEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<EvaluationResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPlan {
    pub step: usize,
    pub entries: Vec<PlanEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub config_hash: String,
    /// Steps whose evaluations are all journaled and whose CSV is written.
    pub completed_steps: usize,
    pub finished: bool,
    pub plan: Option<StepPlan>,
}

#[derive(Serialize, Deserialize)]
struct FrozenConfig {
    hash: String,
    config: Config,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EngineError {
    EngineError::Io(format!("{}: {e}", path.display()))
}

/// Paths and readers/writers of a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn state_path(&self) -> PathBuf {
        self.root.join("state.json")
    }

    pub fn journal_path(&self) -> PathBuf {
        self.root.join("evaluations.jsonl")
    }

    pub fn reindex_path(&self) -> PathBuf {
        self.root.join("reindex.json")
    }

    pub fn step_csv(&self, step: usize) -> PathBuf {
        self.root.join("steps").join(format!("b{step}.csv"))
    }

    pub fn predictor_path(&self, step: usize, kind: &str) -> PathBuf {
        self.root.join("predictors").join(format!("b{step}_{kind}.txt"))
    }

    pub fn create(&self, config: &Config) -> Result<(), EngineError> {
        if self.config_path().exists() {
            return Err(EngineError::AlreadyExists(self.root.display().to_string()));
        }
        for dir in [self.root.clone(), self.root.join("steps"), self.root.join("predictors")] {
            fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        }
        let frozen = FrozenConfig {
            hash: config.hash(),
            config: config.clone(),
        };
        self.write_json(&self.config_path(), &frozen)?;
        self.save_state(&SearchState {
            config_hash: frozen.hash,
            completed_steps: 0,
            finished: false,
            plan: None,
        })
    }

    /// Loads the frozen config, checking it still matches its stored hash.
    pub fn load_config(&self) -> Result<Config, EngineError> {
        let path = self.config_path();
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let frozen: FrozenConfig =
            serde_json::from_str(&text).map_err(|e| EngineError::CorruptState(format!("config.json: {e}")))?;
        if frozen.config.hash() != frozen.hash {
            return Err(EngineError::CorruptState("config.json does not match its hash".into()));
        }
        Ok(frozen.config)
    }

    pub fn load_state(&self) -> Result<SearchState, EngineError> {
        let path = self.state_path();
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        serde_json::from_str(&text).map_err(|e| EngineError::CorruptState(format!("state.json: {e}")))
    }

    pub fn save_state(&self, state: &SearchState) -> Result<(), EngineError> {
        self.write_json(&self.state_path(), state)
    }

    /// Writes through a temporary file so readers never see partial JSON.
    pub fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), EngineError> {
        let text = serde_json::to_string_pretty(value).expect("serializable");
        self.write_text(path, &(text + "\n"))
    }

    pub fn write_text(&self, path: &Path, text: &str) -> Result<(), EngineError> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, text).map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| io_err(path, e))
    }

    pub fn read_journal(&self) -> Result<Vec<CandidateRecord>, EngineError> {
        let path = self.journal_path();
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path, e)),
        };
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(|e| io_err(&path, e))?;
        let mut records = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(r) => records.push(r),
                // a torn final line from an interrupted write is dropped
                Err(_) if i + 1 == lines.len() => break,
                Err(e) => return Err(EngineError::CorruptState(format!("journal line {}: {e}", i + 1))),
            }
        }
        Ok(records)
    }

    pub fn append_journal(&self, records: &[CandidateRecord]) -> Result<(), EngineError> {
        if records.is_empty() {
            return Ok(());
        }
        let path = self.journal_path();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        let mut text = String::new();
        for r in records {
            text.push_str(&serde_json::to_string(r).expect("serializable"));
            text.push('\n');
        }
        f.write_all(text.as_bytes()).and_then(|_| f.flush()).map_err(|e| io_err(&path, e))
    }

    pub fn write_step_csv(&self, step: usize, records: &[CandidateRecord]) -> Result<(), EngineError> {
        let path = self.step_csv(step);
        let mut w = csv::Writer::from_writer(Vec::new());
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record(STEP_CSV_HEADER).map_err(|e| io_err(&path, e))?;
        for r in records {
            let Some(res) = &r.result else { continue };
            w.write_record([
                r.entry.cell.to_string(),
                r.entry.cell.len().to_string(),
                opt(r.entry.pred_accuracy),
                opt(r.entry.pred_time_s),
                res.accuracy.to_string(),
                res.time_s.to_string(),
                res.params.to_string(),
                (r.entry.exploration as u8).to_string(),
            ])
            .map_err(|e| io_err(&path, e))?;
        }
        let bytes = w.into_inner().map_err(|e| io_err(&path, e))?;
        self.write_text(&path, &String::from_utf8(bytes).expect("utf8 csv"))
    }

    pub fn read_step_csv(&self, step: usize) -> Result<Vec<StepRow>, EngineError> {
        read_step_csv(&self.step_csv(step))
    }

    /// Steps with a CSV on disk, ascending.
    pub fn steps_on_disk(&self) -> Vec<usize> {
        let mut steps: Vec<usize> = fs::read_dir(self.root.join("steps"))
            .into_iter()
            .flatten()
            .flatten()
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_prefix('b')?.strip_suffix(".csv")?.parse().ok()
            })
            .collect();
        steps.sort_unstable();
        steps
    }
}

/// One parsed row of a step CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub cell: CellSpec,
    pub blocks: usize,
    pub pred_accuracy: Option<f64>,
    pub pred_time_s: Option<f64>,
    pub accuracy: f64,
    pub time_s: f64,
    pub params: u64,
    pub exploration: bool,
}

pub fn read_step_csv(path: &Path) -> Result<Vec<StepRow>, EngineError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let bad = |what: &str| EngineError::CorruptState(format!("{}: bad {what}", path.display()));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        if rec.len() != STEP_CSV_HEADER.len() {
            return Err(bad("row width"));
        }
        let opt = |i: usize| -> Result<Option<f64>, EngineError> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                rec[i].parse().map(Some).map_err(|_| bad(STEP_CSV_HEADER[i]))
            }
        };
        rows.push(StepRow {
            cell: CellSpec::parse(&rec[0]).map_err(|_| bad("cell"))?,
            blocks: rec[1].parse().map_err(|_| bad("blocks"))?,
            pred_accuracy: opt(2)?,
            pred_time_s: opt(3)?,
            accuracy: rec[4].parse().map_err(|_| bad("accuracy"))?,
            time_s: rec[5].parse().map_err(|_| bad("time_s"))?,
            params: rec[6].parse().map_err(|_| bad("params"))?,
            exploration: &rec[7] == "1",
        });
    }
    Ok(rows)
}
