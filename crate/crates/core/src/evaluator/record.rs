use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::genome::{genome_fingerprint, Fingerprint};

use super::{EvalStatus, EvaluationRequest, EvaluationResult, Evaluator, EvaluatorStats};

/// One line of a response log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedResponse {
    pub request_id: u64,
    pub fingerprint: Fingerprint,
    pub result: EvaluationResult,
}

/// Passes requests through to `inner` and keeps every response.
pub struct Recorder<E> {
    inner: E,
    log: Mutex<Vec<RecordedResponse>>,
}

impl<E: Evaluator> Recorder<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Responses sorted by request id.
    pub fn responses(&self) -> Vec<RecordedResponse> {
        let mut out = self.log.lock().expect("recorder poisoned").clone();
        out.sort_by_key(|r| r.request_id);
        out
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = fs::File::create(path)?;
        for r in self.responses() {
            writeln!(f, "{}", serde_json::to_string(&r)?)?;
        }
        Ok(())
    }
}

impl<E: Evaluator> Evaluator for Recorder<E> {
    fn evaluate(&self, request: &EvaluationRequest) -> EvaluationResult {
        let result = self.inner.evaluate(request);
        self.log.lock().expect("recorder poisoned").push(RecordedResponse {
            request_id: request.request_id,
            fingerprint: genome_fingerprint(&request.genome),
            result: result.clone(),
        });
        result
    }

    fn stats(&self) -> EvaluatorStats {
        self.inner.stats()
    }
}

/// Serves a recorded response log. A request whose id is missing from the
/// log fails as `train_failed`; one whose genome differs from the recorded
/// fingerprint is `invalid`, which signals a diverged replay.
pub struct Replay {
    responses: HashMap<u64, RecordedResponse>,
}

impl Replay {
    pub fn new(responses: impl IntoIterator<Item = RecordedResponse>) -> Self {
        Self {
            responses: responses.into_iter().map(|r| (r.request_id, r)).collect(),
        }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut responses = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            responses.push(serde_json::from_str(&line)?);
        }
        Ok(Self::new(responses))
    }
}

impl Evaluator for Replay {
    fn evaluate(&self, request: &EvaluationRequest) -> EvaluationResult {
        match self.responses.get(&request.request_id) {
            Some(r) if r.fingerprint == genome_fingerprint(&request.genome) => r.result.clone(),
            Some(_) => {
                log::warn!("replay diverged at request {}", request.request_id);
                EvaluationResult::failed(request.request_id, EvalStatus::Invalid)
            }
            None => EvaluationResult::failed(request.request_id, EvalStatus::TrainFailed),
        }
    }
}
