use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::genome::{genome_fingerprint, Fingerprint};

use super::{EvalStatus, EvaluationRequest, EvaluationResult, Evaluator, EvaluatorStats};

type Key = (Fingerprint, u64, u64);
type Slot = Arc<Mutex<Option<EvaluationResult>>>;

/// Memoizes an inner evaluator by genome fingerprint and learning-rate
/// window. Concurrent requests for the same key wait on one another, so the
/// inner evaluator sees each key at most once and hit/miss counts do not
/// depend on scheduling. Transient failures are not stored.
pub struct Caching<E> {
    inner: E,
    enabled: bool,
    slots: Mutex<HashMap<Key, Slot>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<E: Evaluator> Caching<E> {
    pub fn new(inner: E) -> Self {
        Self::with_enabled(inner, true)
    }

    pub fn with_enabled(inner: E, enabled: bool) -> Self {
        Self {
            inner,
            enabled,
            slots: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    fn slot(&self, key: Key) -> Slot {
        let mut slots = self.slots.lock().expect("cache map poisoned");
        slots.entry(key).or_default().clone()
    }
}

impl<E: Evaluator> Evaluator for Caching<E> {
    fn evaluate(&self, request: &EvaluationRequest) -> EvaluationResult {
        if !self.enabled {
            self.misses.fetch_add(1, Ordering::Relaxed);
            return self.inner.evaluate(request);
        }
        let key = (
            genome_fingerprint(&request.genome),
            request.lr_low.to_bits(),
            request.lr_high.to_bits(),
        );
        let slot = self.slot(key);
        let mut entry = slot.lock().expect("cache slot poisoned");
        if let Some(stored) = entry.as_ref() {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return EvaluationResult {
                request_id: request.request_id,
                ..stored.clone()
            };
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let result = self.inner.evaluate(request);
        if result.status != EvalStatus::TrainFailed {
            *entry = Some(result.clone());
        }
        result
    }

    fn stats(&self) -> EvaluatorStats {
        EvaluatorStats {
            cache_hits: self.hits.load(Ordering::Relaxed),
            cache_misses: self.misses.load(Ordering::Relaxed),
            ..self.inner.stats()
        }
    }
}
