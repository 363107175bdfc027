//! Newline-delimited JSON transport to an external trainer process.

use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{EvaluationRequest, EvaluationResult, Evaluator, EvaluatorError, TrainingParams};
use crate::cellspace::CellSpec;
use crate::macroarch::MacroConfig;

pub const PROTOCOL_VERSION: u32 = 1;
const STDERR_TAIL: usize = 4096;

/// Macro fields carried by an `evaluate` frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacroFrame {
    #[serde(rename = "M")]
    pub motifs: u32,
    #[serde(rename = "N")]
    pub normals: u32,
    #[serde(rename = "F")]
    pub filters: u32,
    pub lookback: u32,
    pub residual: bool,
}

impl From<&MacroConfig> for MacroFrame {
    fn from(m: &MacroConfig) -> Self {
        Self {
            motifs: m.motifs,
            normals: m.normals_per_motif,
            filters: m.filters,
            lookback: m.max_lookback,
            residual: m.residual_cells,
        }
    }
}

/// Outgoing frame: `id` and `cmd` lead, command fields follow.
#[derive(Serialize)]
struct Frame<'a, T: Serialize> {
    id: u64,
    cmd: &'a str,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize)]
struct HelloBody {
    protocol: u32,
}

#[derive(Serialize)]
struct EvaluateBody<'a> {
    cell: String,
    #[serde(rename = "macro")]
    macro_frame: MacroFrame,
    training: &'a TrainingParams,
    dataset: &'a str,
}

#[derive(Serialize)]
struct FitBody {
    rows: Vec<(String, f64)>,
}

#[derive(Serialize)]
struct PredictBody {
    cells: Vec<String>,
}

#[derive(Serialize)]
struct Empty {}

/// Requests as seen by a worker.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum WorkerRequest {
    Hello {
        id: u64,
        protocol: u32,
    },
    Evaluate {
        id: u64,
        cell: String,
        #[serde(rename = "macro")]
        macro_frame: MacroFrame,
        #[serde(default)]
        training: TrainingParams,
        #[serde(default)]
        dataset: String,
    },
    FitAcc {
        id: u64,
        rows: Vec<(String, f64)>,
    },
    PredictAcc {
        id: u64,
        cells: Vec<String>,
    },
    Shutdown {
        #[serde(default)]
        id: u64,
    },
}

impl WorkerRequest {
    pub fn id(&self) -> u64 {
        match self {
            WorkerRequest::Hello { id, .. }
            | WorkerRequest::Evaluate { id, .. }
            | WorkerRequest::FitAcc { id, .. }
            | WorkerRequest::PredictAcc { id, .. }
            | WorkerRequest::Shutdown { id } => *id,
        }
    }
}

/// Replies as written by a worker, fields in wire order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloReply {
    pub id: u64,
    pub ok: bool,
    pub worker: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReply {
    pub id: u64,
    pub accuracy: f64,
    pub time_s: f64,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OkReply {
    pub id: u64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredsReply {
    pub id: u64,
    pub preds: Vec<f64>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: &'a str,
}

#[derive(Serialize)]
struct ErrorReply<'a> {
    id: u64,
    error: ErrorBody<'a>,
}

/// Serializes a worker's error frame.
pub fn error_frame(id: u64, code: &str, message: &str) -> String {
    serde_json::to_string(&ErrorReply {
        id,
        error: ErrorBody { code, message },
    })
    .expect("error frame serializes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeOptions {
    pub cmd: Vec<String>,
    /// Per-request timeout in seconds.
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_timeout() -> f64 {
    24.0 * 3600.0
}

/// A running worker process with one request in flight at a time.
pub struct WorkerBridge {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
    stderr: Arc<Mutex<String>>,
    timeout: Duration,
    next_id: u64,
    dead: bool,
    pub worker_name: String,
}

impl std::fmt::Debug for WorkerBridge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerBridge")
            .field("worker_name", &self.worker_name)
            .field("next_id", &self.next_id)
            .finish()
    }
}

impl WorkerBridge {
    /// Launches the worker and performs the handshake.
    pub fn spawn(options: &BridgeOptions) -> Result<Self, EvaluatorError> {
        let (program, args) = options
            .cmd
            .split_first()
            .ok_or_else(|| EvaluatorError::EvaluationFailed("empty worker command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| EvaluatorError::EvaluationFailed(format!("cannot launch `{program}`: {e}")))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(l) if l.trim().is_empty() => continue,
                    Ok(l) => {
                        if tx.send(l).is_err() {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
        });
        let stderr = Arc::new(Mutex::new(String::new()));
        let mut err_pipe = child.stderr.take().expect("piped stderr");
        let sink = Arc::clone(&stderr);
        thread::spawn(move || {
            let mut buf = [0u8; 1024];
            while let Ok(n) = err_pipe.read(&mut buf) {
                if n == 0 {
                    break;
                }
                let mut s = sink.lock().expect("stderr buffer");
                s.push_str(&String::from_utf8_lossy(&buf[..n]));
                if s.len() > STDERR_TAIL {
                    let mut cut = s.len() - STDERR_TAIL;
                    while !s.is_char_boundary(cut) {
                        cut += 1;
                    }
                    s.drain(..cut);
                }
            }
        });
        let mut bridge = Self {
            stdin: child.stdin.take(),
            child,
            lines,
            stderr,
            timeout: Duration::from_secs_f64(options.timeout_s.max(0.001)),
            next_id: 1,
            dead: false,
            worker_name: String::new(),
        };
        let reply = bridge.call("hello", HelloBody {
            protocol: PROTOCOL_VERSION,
        })?;
        if reply.get("ok") != Some(&Value::Bool(true)) {
            return Err(EvaluatorError::Protocol(format!("handshake rejected: {reply}")));
        }
        bridge.worker_name = reply
            .get("worker")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        Ok(bridge)
    }

    fn diagnostics(&mut self) -> String {
        let status = match self.child.try_wait() {
            Ok(Some(s)) => format!("worker exited ({s})"),
            _ => "worker closed its output".to_string(),
        };
        let tail = self.stderr.lock().map(|s| s.trim().to_string()).unwrap_or_default();
        if tail.is_empty() {
            status
        } else {
            format!("{status}; stderr: {tail}")
        }
    }

    fn fail(&mut self) -> EvaluatorError {
        self.dead = true;
        // give the stderr reader a moment to collect the last words
        let deadline = Instant::now() + Duration::from_millis(200);
        while Instant::now() < deadline && matches!(self.child.try_wait(), Ok(None)) {
            thread::sleep(Duration::from_millis(10));
        }
        EvaluatorError::EvaluationFailed(self.diagnostics())
    }

    /// Sends one frame and waits for the reply carrying the same id.
    fn call<T: Serialize>(&mut self, cmd: &str, body: T) -> Result<Value, EvaluatorError> {
        if self.dead {
            return Err(EvaluatorError::EvaluationFailed(self.diagnostics()));
        }
        let id = self.next_id;
        self.next_id += 1;
        let line = serde_json::to_string(&Frame { id, cmd, body }).expect("frame serializes");
        let stdin = self.stdin.as_mut().expect("open stdin");
        if writeln!(stdin, "{line}").and_then(|_| stdin.flush()).is_err() {
            return Err(self.fail());
        }
        let reply = match self.lines.recv_timeout(self.timeout) {
            Ok(l) => l,
            Err(RecvTimeoutError::Timeout) => {
                self.dead = true;
                let _ = self.child.kill();
                return Err(EvaluatorError::Timeout(self.timeout.as_secs_f64()));
            }
            Err(RecvTimeoutError::Disconnected) => return Err(self.fail()),
        };
        let value: Value = serde_json::from_str(&reply)
            .map_err(|e| EvaluatorError::Protocol(format!("malformed frame `{reply}`: {e}")))?;
        if value.get("id").and_then(Value::as_u64) != Some(id) {
            return Err(EvaluatorError::Protocol(format!("expected reply to id {id}, got `{reply}`")));
        }
        if let Some(err) = value.get("error") {
            let text = |k: &str| err.get(k).and_then(Value::as_str).unwrap_or_default().to_string();
            return Err(EvaluatorError::Worker {
                code: text("code"),
                message: text("message"),
            });
        }
        Ok(value)
    }

    pub fn shutdown(&mut self) {
        if !self.dead {
            let id = self.next_id;
            if let Some(stdin) = self.stdin.as_mut() {
                let line = serde_json::to_string(&Frame { id, cmd: "shutdown", body: Empty {} }).expect("frame");
                let _ = writeln!(stdin, "{line}").and_then(|_| stdin.flush());
            }
            self.dead = true;
        }
        self.stdin = None;
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            if !matches!(self.child.try_wait(), Ok(None)) {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for WorkerBridge {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn field<'a>(v: &'a Value, key: &str) -> Result<&'a Value, EvaluatorError> {
    v.get(key)
        .ok_or_else(|| EvaluatorError::Protocol(format!("reply lacks `{key}`: {v}")))
}

impl Evaluator for WorkerBridge {
    fn evaluate(&mut self, request: &EvaluationRequest) -> Result<EvaluationResult, EvaluatorError> {
        let reply = self.call("evaluate", EvaluateBody {
            cell: request.cell.to_string(),
            macro_frame: MacroFrame::from(&request.macro_cfg),
            training: &request.training,
            dataset: &request.dataset,
        })?;
        let num = |k: &str| {
            field(&reply, k)?
                .as_f64()
                .ok_or_else(|| EvaluatorError::Protocol(format!("`{k}` is not a number")))
        };
        let accuracy = num("accuracy")?;
        let time_s = num("time_s")?;
        if !(0.0..=1.0).contains(&accuracy) || !time_s.is_finite() || time_s < 0.0 {
            return Err(EvaluatorError::Protocol(format!("out-of-range result: {reply}")));
        }
        let params = field(&reply, "params")?
            .as_u64()
            .ok_or_else(|| EvaluatorError::Protocol("`params` is not a non-negative integer".into()))?;
        Ok(EvaluationResult {
            accuracy,
            time_s,
            params,
            flops: reply.get("flops").and_then(Value::as_u64),
        })
    }

    fn fit_accuracy(&mut self, rows: &[(CellSpec, f64)]) -> Result<(), EvaluatorError> {
        let reply = self.call("fit_acc", FitBody {
            rows: rows.iter().map(|(c, a)| (c.to_string(), *a)).collect(),
        })?;
        match reply.get("ok") {
            Some(Value::Bool(true)) => Ok(()),
            _ => Err(EvaluatorError::Protocol(format!("fit_acc not acknowledged: {reply}"))),
        }
    }

    fn predict_accuracy(&mut self, cells: &[CellSpec]) -> Result<Vec<f64>, EvaluatorError> {
        let reply = self.call("predict_acc", PredictBody {
            cells: cells.iter().map(|c| c.to_string()).collect(),
        })?;
        let preds: Vec<f64> = serde_json::from_value(field(&reply, "preds")?.clone())
            .map_err(|e| EvaluatorError::Protocol(format!("bad `preds`: {e}")))?;
        if preds.len() != cells.len() {
            return Err(EvaluatorError::Protocol(format!(
                "{} predictions for {} cells",
                preds.len(),
                cells.len()
            )));
        }
        Ok(preds.into_iter().map(|p| p.clamp(0.0, 1.0)).collect())
    }
}
