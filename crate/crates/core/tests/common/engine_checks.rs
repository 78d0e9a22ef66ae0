use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use chimera_core::engine::{
    checkpoint, restore, roulette, Engine, EngineConfig, Neighbor, Objective, SearchSpace, SearchState, TrialOutcome,
};
use chimera_core::evaluator::{EvalStatus, Recorder, Replay, SurrogateLandscape};
use chimera_core::genome::{Fingerprint, Genome, SearchBounds, Shape};
use chimera_core::telemetry::{MemoryObserver, Observer, Phase};
use chimera_core::{config::reference_target, ArchitectureObjective, ArchitectureSpace, MutationConfig, RandomSource};
use rand::Rng;

use super::{within_three_sigma, Check};
use crate::ensure;

/// Genomes are opaque tokens drawn uniformly below `modulus`.
pub struct TokenSpace {
    pub modulus: u64,
}

impl SearchSpace for TokenSpace {
    type Genome = u64;

    fn random(&self, rng: &mut RandomSource) -> Result<u64, chimera_core::EngineError> {
        Ok(rng.random_range(0..self.modulus))
    }

    fn neighbor(&self, _parent: &u64, _exhaustion: u32, rng: &mut RandomSource) -> Neighbor<u64> {
        Neighbor {
            genome: rng.random_range(0..self.modulus),
            fell_back: false,
        }
    }

    fn fingerprint(&self, genome: &u64) -> Fingerprint {
        Fingerprint(*genome)
    }
}

pub fn tokens() -> TokenSpace {
    TokenSpace { modulus: u64::MAX }
}

/// Loss looked up from `(request_id, token)`; `None` reports `TrainFailed`.
pub struct Scripted<F> {
    script: F,
    pub calls: AtomicU64,
}

impl<F: Fn(u64, u64) -> Option<f64> + Sync> Scripted<F> {
    pub fn new(script: F) -> Self {
        Self {
            script,
            calls: AtomicU64::new(0),
        }
    }
}

impl<F: Fn(u64, u64) -> Option<f64> + Sync> Objective<u64> for Scripted<F> {
    fn evaluate(&self, request_id: u64, genome: &u64) -> TrialOutcome<u64> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match (self.script)(request_id, *genome) {
            Some(loss) => TrialOutcome::Scored { loss, genome: *genome },
            None => TrialOutcome::Failed(EvalStatus::TrainFailed),
        }
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

pub fn replace_iff_strictly_better() -> Check {
    // ids 0..3 initialize at 0.5; employed trials 3, 4, 5 are better, tied, worse
    for (label, last) in [("worse", Some(0.6)), ("failed", None)] {
        let obj = Scripted::new(move |id, _| match id {
            3 => Some(0.4),
            4 => Some(0.5),
            5 => last,
            _ => Some(0.5),
        });
        let space = tokens();
        let engine = Engine::new(&space, &obj, EngineConfig::new(3, 1)).map_err(err)?;
        let mut state = engine.initialize(&mut ()).map_err(err)?;
        let before = state.candidates.clone();
        engine.employed_phase(&mut state, &mut ()).map_err(err)?;
        let c = &state.candidates;
        ensure!(c[0].eval_id == 3 && c[0].loss == 0.4, "better trial not accepted");
        ensure!(c[0].exhaustion == 0, "accepted candidate kept exhaustion");
        ensure!(
            c[1].genome == before[1].genome && c[1].exhaustion == 1,
            "tied trial replaced incumbent"
        );
        ensure!(
            c[2].genome == before[2].genome && c[2].exhaustion == 1,
            "{label} trial replaced incumbent"
        );
    }
    Ok(())
}

pub fn exhaustion_count_and_reset() -> Check {
    let obj = Scripted::new(|id, _| {
        Some(match id {
            0 => 1.0,
            6 => 0.5,
            _ => 2.0,
        })
    });
    let space = tokens();
    let engine = Engine::new(&space, &obj, EngineConfig::new(1, 1)).map_err(err)?;
    let mut state = engine.initialize(&mut ()).map_err(err)?;
    for expected in 1..=5 {
        engine.employed_phase(&mut state, &mut ()).map_err(err)?;
        ensure!(
            state.candidates[0].exhaustion == expected,
            "exhaustion {} after {expected} failed trials",
            state.candidates[0].exhaustion
        );
    }
    engine.employed_phase(&mut state, &mut ()).map_err(err)?;
    ensure!(
        state.candidates[0].exhaustion == 0,
        "exhaustion not reset by improvement"
    );
    ensure!(state.candidates[0].loss == 0.5, "improving trial not adopted");
    Ok(())
}

/// With every trial tied, candidates hit the limit of 10 and must be
/// archived and replaced right after the employed phase.
pub fn archival_at_limit() -> Check {
    const NP: usize = 3;
    const LIMIT: u32 = 10;
    let obj = Scripted::new(|_, _| Some(1.0));
    let space = tokens();
    let mut cfg = EngineConfig::new(NP, 10);
    cfg.max_exhaustion = Some(LIMIT);
    cfg.rng_seed = 5;
    let engine = Engine::new(&space, &obj, cfg).map_err(err)?;
    let mut state = engine.initialize(&mut ()).map_err(err)?;
    let mut archived_total = 0;
    for it in 0..10 {
        let before = state.candidates.clone();
        let archive_before = state.archive.len();
        engine.employed_phase(&mut state, &mut ()).map_err(err)?;
        ensure!(state.candidates.len() == NP, "population size changed");
        let mut newly = Vec::new();
        for (slot, prev) in before.iter().enumerate() {
            let now = &state.candidates[slot];
            if prev.exhaustion + 1 >= LIMIT {
                newly.push(prev.genome);
                ensure!(
                    now.exhaustion == 0,
                    "iteration {it}: reinitialized slot {slot} has exhaustion"
                );
                ensure!(
                    now.eval_id > prev.eval_id,
                    "iteration {it}: slot {slot} not re-evaluated"
                );
            } else {
                ensure!(
                    now.genome == prev.genome && now.exhaustion == prev.exhaustion + 1,
                    "iteration {it}: slot {slot} changed without reaching the limit"
                );
            }
        }
        let added: Vec<u64> = state.archive[archive_before..].iter().map(|c| c.genome).collect();
        ensure!(added == newly, "iteration {it}: archived {added:?}, expected {newly:?}");
        ensure!(
            state.archive[archive_before..].iter().all(|c| c.exhaustion >= LIMIT),
            "archived candidate below the limit"
        );
        archived_total += added.len();
        let archive_mid = state.archive.len();
        engine.onlooker_phase(&mut state, &mut ()).map_err(err)?;
        ensure!(
            state.archive.len() == archive_mid,
            "onlooker phase archived a candidate"
        );
        ensure!(
            state.candidates.len() == NP,
            "population size changed in onlooker phase"
        );
    }
    ensure!(archived_total > 0, "no candidate was ever archived");
    ensure!(
        state.telemetry.reinitializations == archived_total as u64,
        "reinitialization counter {} vs {archived_total}",
        state.telemetry.reinitializations
    );
    Ok(())
}

struct SizeWatch {
    np: usize,
    bad: Option<usize>,
    iterations: u32,
}

impl<G> Observer<G> for SizeWatch {
    fn on_iteration(&mut self, _r: &chimera_core::telemetry::IterationRecord, state: &SearchState<G>) {
        self.iterations += 1;
        if state.candidates.len() != self.np {
            self.bad = Some(state.candidates.len());
        }
    }
}

pub fn population_constant() -> Check {
    let obj = Scripted::new(|id, t| Some(((id * 31 + t % 97) % 13) as f64));
    let space = tokens();
    let mut cfg = EngineConfig::new(7, 30);
    cfg.max_exhaustion = Some(2);
    let engine = Engine::new(&space, &obj, cfg).map_err(err)?;
    let mut watch = SizeWatch {
        np: 7,
        bad: None,
        iterations: 0,
    };
    engine.run(&mut watch).map_err(err)?;
    ensure!(watch.bad.is_none(), "population size became {:?}", watch.bad);
    ensure!(watch.iterations == 30, "ran {} iterations", watch.iterations);
    Ok(())
}

/// Evaluation count for `Np = 2`, one iteration: 2 initial, 2 employed and
/// 2 onlooker trials.
pub fn evaluation_count() -> Check {
    let obj = Scripted::new(|_, _| Some(1.0));
    let space = tokens();
    let out = Engine::new(&space, &obj, EngineConfig::new(2, 1))
        .map_err(err)?
        .run(&mut ())
        .map_err(err)?;
    let calls = obj.calls.load(Ordering::SeqCst);
    ensure!(calls == 6, "{calls} evaluations");
    ensure!(
        out.state.telemetry.evals_total == 6,
        "evals_total {}",
        out.state.telemetry.evals_total
    );
    Ok(())
}

pub const ROULETTE_DRAWS: u64 = 100_000;

pub fn roulette_frequencies() -> Check {
    // fitness of losses 0, 1, 3 is 1, 1/2, 1/4
    let weights = [1.0, 0.5, 0.25];
    let probs = [4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0];
    let mut rng = RandomSource::seed_from_u64(41);
    let mut counts = [0u64; 3];
    for _ in 0..ROULETTE_DRAWS {
        counts[roulette(&weights, &mut rng)] += 1;
    }
    for i in 0..3 {
        within_three_sigma(counts[i], ROULETTE_DRAWS, probs[i]).map_err(|e| format!("roulette slot {i}: {e}"))?;
    }

    // the same law inside the onlooker phase, with trials that never win
    let obj = Scripted::new(|id, _| {
        Some(match id {
            0 => 0.0,
            1 => 1.0,
            2 => 3.0,
            _ => 100.0,
        })
    });
    let space = tokens();
    let engine = Engine::new(&space, &obj, EngineConfig::new(3, 1)).map_err(err)?;
    let mut state = engine.initialize(&mut ()).map_err(err)?;
    let mut obs = MemoryObserver::default();
    let phases = ROULETTE_DRAWS.div_ceil(3);
    for _ in 0..phases {
        engine.onlooker_phase(&mut state, &mut obs).map_err(err)?;
        obs.evaluations.retain(|r| r.phase != Phase::Onlooker || r.slot < 3);
    }
    let mut counts = [0u64; 3];
    for r in obs.evaluations.iter().filter(|r| r.phase == Phase::Onlooker) {
        counts[r.slot] += 1;
    }
    let n = phases * 3;
    for i in 0..3 {
        within_three_sigma(counts[i], n, probs[i]).map_err(|e| format!("onlooker slot {i}: {e}"))?;
    }
    Ok(())
}

/// Final models against an independent merge of archive and population.
pub fn final_models_deduplicated() -> Check {
    let obj = Scripted::new(|id, t| Some(((t * 7 + id) % 11) as f64 / 10.0));
    let space = TokenSpace { modulus: 6 };
    let mut cfg = EngineConfig::new(4, 25);
    cfg.max_exhaustion = Some(2);
    cfg.rng_seed = 9;
    let out = Engine::new(&space, &obj, cfg).map_err(err)?.run(&mut ()).map_err(err)?;
    ensure!(!out.state.archive.is_empty(), "scenario produced no archive");
    let mut best: HashMap<u64, f64> = HashMap::new();
    for c in out.state.archive.iter().chain(&out.state.candidates) {
        let e = best.entry(c.genome).or_insert(c.loss);
        *e = e.min(c.loss);
    }
    let mut expected: Vec<(u64, f64)> = best.into_iter().collect();
    expected.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let losses: Vec<f64> = out.final_models.iter().map(|c| c.loss).collect();
    ensure!(
        losses.windows(2).all(|w| w[0] <= w[1]),
        "final models not sorted: {losses:?}"
    );
    let mut got: Vec<(u64, f64)> = out.final_models.iter().map(|c| (c.genome, c.loss)).collect();
    got.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    ensure!(got == expected, "final models {got:?}, expected {expected:?}");
    Ok(())
}

pub fn architecture_setup() -> (ArchitectureSpace, Genome) {
    let bounds = SearchBounds::new(Shape::new(3, 32, 32), 10, 12);
    let target = reference_target(&bounds);
    (ArchitectureSpace::new(bounds, MutationConfig::default()), target)
}

fn architecture_config(max_iter: u32, parallel: usize) -> EngineConfig<Genome> {
    let mut cfg = EngineConfig::new(4, max_iter);
    cfg.max_exhaustion = Some(3);
    cfg.rng_seed = 77;
    cfg.parallel_evals = parallel;
    cfg
}

pub fn best_so_far_monotone() -> Check {
    let (space, target) = architecture_setup();
    let obj = ArchitectureObjective::new(SurrogateLandscape::new(target), None);
    let mut obs = MemoryObserver::default();
    let out = Engine::new(&space, &obj, architecture_config(25, 1))
        .map_err(err)?
        .run(&mut obs)
        .map_err(err)?;
    let history = &out.state.telemetry.history;
    ensure!(history.len() == 25, "history has {} entries", history.len());
    ensure!(
        history.windows(2).all(|w| w[1].best_loss <= w[0].best_loss),
        "best-so-far increased"
    );
    let mut seen = f64::INFINITY;
    let mut evals = obs.evaluations.iter().peekable();
    for rec in history {
        while let Some(e) = evals.next_if(|e| e.iteration <= rec.iteration) {
            if let Some(l) = e.loss {
                seen = seen.min(l);
            }
        }
        ensure!(
            rec.best_loss == seen,
            "iteration {}: best {} vs observed {seen}",
            rec.iteration,
            rec.best_loss
        );
    }
    Ok(())
}

/// Stopping after 5 iterations, snapshotting, restoring and resuming
/// reproduces an uninterrupted 12-iteration run exactly.
pub fn checkpoint_continuation() -> Check {
    let (space, target) = architecture_setup();
    let obj = ArchitectureObjective::new(SurrogateLandscape::new(target), None);
    let full = Engine::new(&space, &obj, architecture_config(12, 1))
        .map_err(err)?
        .run(&mut ())
        .map_err(err)?;
    let partial = Engine::new(&space, &obj, architecture_config(5, 1))
        .map_err(err)?
        .run(&mut ())
        .map_err(err)?;
    let snapshot = checkpoint(&partial.state, serde_json::json!({"note": "partial"}));
    let (state, ctx) = restore::<Genome>(&snapshot).map_err(err)?;
    ensure!(state == partial.state, "restored state differs from snapshot source");
    ensure!(ctx["note"] == "partial", "context lost");
    let resumed = Engine::new(&space, &obj, architecture_config(12, 1))
        .map_err(err)?
        .resume(state, &mut ())
        .map_err(err)?;
    ensure!(resumed.state == full.state, "resumed run diverged");
    ensure!(
        checkpoint(&resumed.state, serde_json::Value::Null) == checkpoint(&full.state, serde_json::Value::Null),
        "snapshots differ"
    );
    ensure!(resumed.final_models == full.final_models, "final models differ");
    Ok(())
}

/// Objective wrapper that finishes requests out of order.
struct Jitter<O>(O);

impl<O: Objective<Genome>> Objective<Genome> for Jitter<O> {
    fn evaluate(&self, request_id: u64, genome: &Genome) -> TrialOutcome<Genome> {
        std::thread::sleep(std::time::Duration::from_micros((request_id * 7919) % 3 * 400));
        self.0.evaluate(request_id, genome)
    }
}

/// Identical runs under 1 and 4 workers, and a recorded run replayed under
/// the other worker count.
pub fn parallel_determinism() -> Check {
    let (space, target) = architecture_setup();
    let mut runs = Vec::new();
    for parallel in [1, 4] {
        let recorder = Recorder::new(SurrogateLandscape::new(target.clone()));
        let obj = Jitter(ArchitectureObjective::new(&recorder, None));
        let mut obs = MemoryObserver::default();
        let out = Engine::new(&space, &obj, architecture_config(10, parallel))
            .map_err(err)?
            .run(&mut obs)
            .map_err(err)?;
        runs.push((out, obs, recorder.responses()));
    }
    let (a, b) = (&runs[0], &runs[1]);
    ensure!(a.0.state == b.0.state, "final state differs between 1 and 4 workers");
    ensure!(a.1 == b.1, "telemetry stream differs between 1 and 4 workers");
    ensure!(a.2 == b.2, "evaluator saw different requests");

    for (i, parallel) in [(0usize, 4usize), (1, 1)] {
        let obj = Jitter(ArchitectureObjective::new(Replay::new(runs[i].2.clone()), None));
        let out = Engine::new(&space, &obj, architecture_config(10, parallel))
            .map_err(err)?
            .run(&mut ())
            .map_err(err)?;
        ensure!(out.state == runs[i].0.state, "replay under {parallel} workers diverged");
    }
    Ok(())
}
