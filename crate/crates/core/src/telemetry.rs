//! Per-evaluation and per-iteration records emitted by the engine.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::engine::{EngineError, SearchState};
use crate::evaluator::EvalStatus;
use crate::genome::Fingerprint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Employed,
    Onlooker,
    Reinit,
}

/// One line of the evaluation stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    /// 0 during initialization, otherwise the 1-based iteration in progress.
    pub iteration: u32,
    pub phase: Phase,
    /// Population slot the trial competes for.
    pub slot: usize,
    pub request_id: u64,
    pub fingerprint: Fingerprint,
    pub lineage: String,
    pub status: EvalStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    pub accepted: bool,
    pub fell_back: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    /// Best loss seen so far across archive and population.
    pub best_loss: f64,
    pub mean_loss: f64,
    pub worst_loss: f64,
    pub archive_size: usize,
    pub evals_total: u64,
}

pub const ITERATION_CSV_HEADER: &str = "iteration,best_loss,mean_loss,archive_size,evals_total";

pub fn iteration_csv_row(r: &IterationRecord) -> String {
    format!(
        "{},{},{},{},{}",
        r.iteration, r.best_loss, r.mean_loss, r.archive_size, r.evals_total
    )
}

pub fn iterations_to_csv(records: &[IterationRecord]) -> String {
    let mut out = String::from(ITERATION_CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", iteration_csv_row(r));
    }
    out
}

/// Running totals kept inside the search state (and therefore checkpointed).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub evals_total: u64,
    pub failures: u64,
    pub fallbacks: u64,
    pub reinitializations: u64,
    pub best_loss: Option<f64>,
    pub history: Vec<IterationRecord>,
}

/// Receives engine events. All methods default to no-ops.
pub trait Observer<G> {
    fn on_evaluation(&mut self, _record: &EvaluationRecord) {}

    /// Called at every iteration boundary, after `record` was appended to the
    /// state's history. A convenient place to checkpoint.
    fn on_iteration(&mut self, _record: &IterationRecord, _state: &SearchState<G>) {}

    /// Called before the engine returns an unrecoverable error, with the
    /// state as of the last completed iteration.
    fn on_abort(&mut self, _state: &SearchState<G>, _error: &EngineError) {}
}

impl<G> Observer<G> for () {}

/// Keeps every record in memory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryObserver {
    pub evaluations: Vec<EvaluationRecord>,
    pub iterations: Vec<IterationRecord>,
}

impl<G> Observer<G> for MemoryObserver {
    fn on_evaluation(&mut self, record: &EvaluationRecord) {
        self.evaluations.push(record.clone());
    }

    fn on_iteration(&mut self, record: &IterationRecord, _state: &SearchState<G>) {
        self.iterations.push(record.clone());
    }
}
