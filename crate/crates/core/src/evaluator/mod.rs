//! Black-box evaluation contract.
//!
//! The engine never trains anything itself. It sends an
//! [`EvaluationRequest`] carrying a genome and a learning-rate window to an
//! [`Evaluator`] and receives an [`EvaluationResult`] back. Implementations
//! here cover a training-free surrogate landscape, a memoizing wrapper,
//! record/replay, a constant stub and a pool of external worker processes.

mod cache;
mod external;
mod record;
mod surrogate;

use serde::{Deserialize, Serialize};

use crate::genome::{genome_fingerprint, Genome};

pub use cache::Caching;
pub use external::{CommandSpec, ExternalProcess, PROTOCOL_VERSION};
pub use record::{RecordedResponse, Recorder, Replay};
pub use surrogate::{surrogate_distance, SurrogateLandscape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub max_epochs: u32,
    pub patience: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRequest {
    pub request_id: u64,
    pub genome: Genome,
    pub lr_low: f64,
    pub lr_high: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<Budget>,
}

impl EvaluationRequest {
    /// Builds a request whose learning-rate window spans one decade either
    /// side of the genome's inherited `lr_hint`.
    pub fn for_genome(request_id: u64, genome: Genome, budget: Option<Budget>) -> Self {
        let lr_high = genome.lr_hint * 10.0;
        let lr_low = lr_high / 100.0;
        Self {
            request_id,
            genome,
            lr_low,
            lr_high,
            budget,
        }
    }

    pub fn lr_midpoint(&self) -> f64 {
        (self.lr_low * self.lr_high).sqrt().clamp(self.lr_low, self.lr_high)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Ok,
    TrainFailed,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub request_id: u64,
    pub status: EvalStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_lr: Option<f64>,
    #[serde(default)]
    pub wall_seconds: f64,
}

impl EvaluationResult {
    pub fn ok(request_id: u64, val_loss: f64, chosen_lr: f64) -> Self {
        Self {
            request_id,
            status: EvalStatus::Ok,
            val_loss: Some(val_loss),
            train_loss: Some(val_loss),
            chosen_lr: Some(chosen_lr),
            wall_seconds: 0.0,
        }
    }

    pub fn failed(request_id: u64, status: EvalStatus) -> Self {
        Self {
            request_id,
            status,
            val_loss: None,
            train_loss: None,
            chosen_lr: None,
            wall_seconds: 0.0,
        }
    }
}

/// Lines exchanged with external workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Hello { protocol_version: u32 },
    Eval(EvaluationRequest),
    Result(EvaluationResult),
}

impl WireMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("wire messages always serialize")
    }

    pub fn parse(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line.trim_end())
    }
}

/// Counters an evaluator exposes to telemetry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluatorStats {
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub worker_restarts: u64,
    pub protocol_errors: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum EvaluatorError {
    #[error("failed to spawn evaluator worker `{command}`: {reason}")]
    SpawnFailed { command: String, reason: String },
    #[error("protocol version mismatch: worker speaks {found}, engine speaks {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Anything that can score a genome. Must tolerate concurrent calls.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, request: &EvaluationRequest) -> EvaluationResult;

    fn stats(&self) -> EvaluatorStats {
        EvaluatorStats::default()
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn evaluate(&self, request: &EvaluationRequest) -> EvaluationResult {
        (**self).evaluate(request)
    }

    fn stats(&self) -> EvaluatorStats {
        (**self).stats()
    }
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn evaluate(&self, request: &EvaluationRequest) -> EvaluationResult {
        (**self).evaluate(request)
    }

    fn stats(&self) -> EvaluatorStats {
        (**self).stats()
    }
}

/// Returns a fixed loss, or a deterministic pseudo-random loss in `[0, 1)`
/// derived from the genome fingerprint when no loss is given.
#[derive(Debug, Clone, Default)]
pub struct StubEvaluator {
    pub loss: Option<f64>,
}

impl StubEvaluator {
    pub fn constant(loss: f64) -> Self {
        Self { loss: Some(loss) }
    }
}

impl Evaluator for StubEvaluator {
    fn evaluate(&self, request: &EvaluationRequest) -> EvaluationResult {
        if request.genome.validate().is_err() {
            return EvaluationResult::failed(request.request_id, EvalStatus::Invalid);
        }
        let loss = self.loss.unwrap_or_else(|| {
            let fp = genome_fingerprint(&request.genome).0;
            (fp >> 11) as f64 / (1u64 << 53) as f64
        });
        EvaluationResult::ok(request.request_id, loss, request.lr_midpoint())
    }
}
