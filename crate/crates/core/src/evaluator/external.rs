//! Pool of external trainer processes speaking the line-delimited protocol.
//!
//! Each worker is a child process. The engine writes one `eval` message per
//! line to its stdin and reads one `result` line back. A worker announces
//! itself with `{"type":"hello","protocol_version":1}` before serving.
//! Timeouts, crashes and malformed output fail the request as
//! `train_failed` and the worker is replaced.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{EvalStatus, EvaluationRequest, EvaluationResult, Evaluator, EvaluatorError, EvaluatorStats, WireMessage};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandSpec {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

impl CommandSpec {
    pub fn new(program: impl Into<String>, args: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            program: program.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }

    fn display(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Worker {
    fn spawn(spec: &CommandSpec, timeout: Duration) -> Result<Self, EvaluatorError> {
        let spawn_err = |reason: String| EvaluatorError::SpawnFailed {
            command: spec.display(),
            reason,
        };
        let mut child = Command::new(&spec.program)
            .args(&spec.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| spawn_err(e.to_string()))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut worker = Worker { child, stdin, lines };
        let hello = match worker.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(spawn_err(e.to_string())),
            Err(_) => return Err(spawn_err("no handshake from worker".into())),
        };
        match WireMessage::parse(&hello) {
            Ok(WireMessage::Hello { protocol_version }) if protocol_version == PROTOCOL_VERSION => Ok(worker),
            Ok(WireMessage::Hello { protocol_version }) => {
                worker.kill();
                Err(EvaluatorError::VersionMismatch {
                    found: protocol_version,
                    expected: PROTOCOL_VERSION,
                })
            }
            _ => {
                worker.kill();
                Err(spawn_err(format!("expected hello, got `{hello}`")))
            }
        }
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn exchange(&mut self, request: &EvaluationRequest, timeout: Duration) -> Result<EvaluationResult, Fault> {
        let line = WireMessage::Eval(request.clone()).to_line();
        writeln!(self.stdin, "{line}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Fault::Died(e.to_string()))?;
        let reply = match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(Fault::Died(e.to_string())),
            Err(RecvTimeoutError::Timeout) => return Err(Fault::Timeout),
            Err(RecvTimeoutError::Disconnected) => return Err(Fault::Died("worker closed stdout".into())),
        };
        match WireMessage::parse(&reply) {
            Ok(WireMessage::Result(r)) if r.request_id == request.request_id => Ok(r),
            Ok(WireMessage::Result(r)) => Err(Fault::Protocol(format!(
                "response for request {} while awaiting {}",
                r.request_id, request.request_id
            ))),
            Ok(other) => Err(Fault::Protocol(format!("unexpected message {other:?}"))),
            Err(e) => Err(Fault::Protocol(format!("malformed response `{reply}`: {e}"))),
        }
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        self.kill();
    }
}

#[derive(Debug)]
enum Fault {
    Timeout,
    Died(String),
    Protocol(String),
}

/// A fixed-size pool of worker processes. Slots holding `None` are
/// respawned on next use.
pub struct ExternalProcess {
    spec: CommandSpec,
    timeout: Duration,
    idle: Mutex<Vec<Option<Worker>>>,
    returned: Condvar,
    restarts: AtomicU64,
    protocol_errors: AtomicU64,
}

impl ExternalProcess {
    pub fn spawn(spec: CommandSpec, workers: usize, timeout: Duration) -> Result<Self, EvaluatorError> {
        let pool = (0..workers.max(1))
            .map(|_| Worker::spawn(&spec, timeout).map(Some))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            spec,
            timeout,
            idle: Mutex::new(pool),
            returned: Condvar::new(),
            restarts: AtomicU64::new(0),
            protocol_errors: AtomicU64::new(0),
        })
    }

    fn checkout(&self) -> Option<Worker> {
        let mut idle = self.idle.lock().expect("worker pool poisoned");
        loop {
            if let Some(slot) = idle.pop() {
                return slot;
            }
            idle = self.returned.wait(idle).expect("worker pool poisoned");
        }
    }

    fn checkin(&self, worker: Option<Worker>) {
        self.idle.lock().expect("worker pool poisoned").push(worker);
        self.returned.notify_one();
    }
}

impl Evaluator for ExternalProcess {
    fn evaluate(&self, request: &EvaluationRequest) -> EvaluationResult {
        let started = Instant::now();
        let worker = match self.checkout() {
            Some(w) => Some(w),
            None => {
                self.restarts.fetch_add(1, Ordering::Relaxed);
                match Worker::spawn(&self.spec, self.timeout) {
                    Ok(w) => Some(w),
                    Err(e) => {
                        log::error!("worker respawn failed: {e}");
                        None
                    }
                }
            }
        };
        let Some(mut worker) = worker else {
            self.checkin(None);
            return EvaluationResult::failed(request.request_id, EvalStatus::TrainFailed);
        };
        match worker.exchange(request, self.timeout) {
            Ok(mut result) => {
                if result.wall_seconds == 0.0 {
                    result.wall_seconds = started.elapsed().as_secs_f64();
                }
                self.checkin(Some(worker));
                result
            }
            Err(fault) => {
                match &fault {
                    Fault::Protocol(msg) => {
                        self.protocol_errors.fetch_add(1, Ordering::Relaxed);
                        log::error!("protocol error on request {}: {msg}", request.request_id);
                    }
                    Fault::Timeout => log::warn!("request {} timed out", request.request_id),
                    Fault::Died(msg) => log::warn!("worker died on request {}: {msg}", request.request_id),
                }
                drop(worker);
                // respawned lazily by the next checkout
                self.checkin(None);
                EvaluationResult::failed(request.request_id, EvalStatus::TrainFailed)
            }
        }
    }

    fn stats(&self) -> EvaluatorStats {
        EvaluatorStats {
            worker_restarts: self.restarts.load(Ordering::Relaxed),
            protocol_errors: self.protocol_errors.load(Ordering::Relaxed),
            ..EvaluatorStats::default()
        }
    }
}
