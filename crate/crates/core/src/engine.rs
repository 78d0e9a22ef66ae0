//! The bee-colony search loop.
//!
//! A population of `Np` candidates is improved in alternating phases. In the
//! employed phase every candidate gets exactly one mutated trial; in the
//! onlooker phase `Np` candidates are drawn by fitness-proportional roulette
//! and each draw produces a trial. A trial replaces its candidate only when
//! its validation loss is strictly lower; otherwise the candidate's
//! exhaustion counter grows. Candidates that reach the exhaustion limit
//! during the employed phase are archived and replaced by fresh random ones.
//!
//! The engine is generic over a [`SearchSpace`] (how genomes are created and
//! mutated) and an [`Objective`] (how they are scored), so the same loop
//! drives CNN architectures and plain vectors alike.
//!
//! All randomness is consumed sequentially from the state's generator before
//! any trial of a phase is evaluated, and results are applied in slot order,
//! so runs are reproducible regardless of `parallel_evals`.

use std::collections::HashSet;
use std::fmt::Debug;

use rand::Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::evaluator::EvalStatus;
use crate::genome::Fingerprint;
use crate::rng::RandomSource;
use crate::telemetry::{EvaluationRecord, IterationRecord, Observer, Phase, Telemetry};

/// Attempts to obtain a successfully evaluated fresh candidate for one slot.
pub const MAX_FRESH_ATTEMPTS: u32 = 16;

pub const CHECKPOINT_FORMAT: &str = "chimera-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A freshly mutated genome.
#[derive(Debug, Clone)]
pub struct Neighbor<G> {
    pub genome: G,
    /// The mutation operator gave up and returned the parent unchanged.
    pub fell_back: bool,
}

pub trait SearchSpace: Sync {
    type Genome: Clone + Debug + Send + Sync + Serialize + DeserializeOwned;

    fn random(&self, rng: &mut RandomSource) -> Result<Self::Genome, EngineError>;

    fn neighbor(&self, parent: &Self::Genome, exhaustion: u32, rng: &mut RandomSource) -> Neighbor<Self::Genome>;

    fn fingerprint(&self, genome: &Self::Genome) -> Fingerprint;

    fn lineage(&self, _genome: &Self::Genome) -> String {
        String::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialOutcome<G> {
    /// Scored trial. The objective may return an updated genome (for
    /// instance with a refined learning-rate hint).
    Scored { loss: f64, genome: G },
    /// `TrainFailed` or `Invalid`; counts as a non-improving trial.
    Failed(EvalStatus),
    /// The evaluator broke its contract; the run aborts.
    Violation(String),
}

pub trait Objective<G>: Sync {
    fn evaluate(&self, request_id: u64, genome: &G) -> TrialOutcome<G>;
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("invalid engine config `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("evaluator contract violation: {0}")]
    ContractViolation(String),
    #[error("could not generate a genome: {0}")]
    Generation(String),
    #[error("slot {slot} could not be evaluated after {attempts} attempts")]
    Evaluation { slot: usize, attempts: u32 },
}

/// Fitness of a validation loss: `1 / (1 + loss)`.
pub fn fitness(loss: f64) -> Result<f64, EngineError> {
    if !loss.is_finite() || loss < 0.0 {
        return Err(EngineError::ContractViolation(format!(
            "loss must be finite and non-negative, got {loss}"
        )));
    }
    Ok(1.0 / (1.0 + loss))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate<G> {
    pub genome: G,
    pub loss: f64,
    pub fitness: f64,
    pub exhaustion: u32,
    pub eval_id: u64,
}

impl<G> Candidate<G> {
    fn fresh(genome: G, loss: f64, eval_id: u64) -> Result<Self, EngineError> {
        Ok(Self {
            genome,
            loss,
            fitness: fitness(loss)?,
            exhaustion: 0,
            eval_id,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig<G> {
    pub population_size: usize,
    pub max_iter: u32,
    #[serde(default)]
    pub loss_threshold: Option<f64>,
    /// `None` disables archival and reinitialization.
    #[serde(default)]
    pub max_exhaustion: Option<u32>,
    #[serde(default)]
    pub seed_genome: Option<G>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "one")]
    pub parallel_evals: usize,
}

fn one() -> usize {
    1
}

impl<G> EngineConfig<G> {
    pub fn new(population_size: usize, max_iter: u32) -> Self {
        Self {
            population_size,
            max_iter,
            loss_threshold: None,
            max_exhaustion: None,
            seed_genome: None,
            rng_seed: 0,
            parallel_evals: 1,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |field, reason: &str| {
            Err(EngineError::Config {
                field,
                reason: reason.to_string(),
            })
        };
        if self.population_size == 0 {
            return bad("engine.population_size", "must be at least 1");
        }
        if self.max_iter == 0 {
            return bad("engine.max_iter", "must be at least 1");
        }
        if self.parallel_evals == 0 {
            return bad("engine.parallel_evals", "must be at least 1");
        }
        if self.max_exhaustion == Some(0) {
            return bad("engine.max_exhaustion", "must be at least 1 when set");
        }
        if let Some(t) = self.loss_threshold {
            if !(t.is_finite() && t >= 0.0) {
                return bad("engine.loss_threshold", "must be a non-negative number");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchState<G> {
    pub candidates: Vec<Candidate<G>>,
    pub archive: Vec<Candidate<G>>,
    /// Completed iterations.
    pub iteration: u32,
    pub rng: RandomSource,
    pub next_request_id: u64,
    pub telemetry: Telemetry,
}

impl<G> SearchState<G> {
    pub fn min_loss(&self) -> Option<f64> {
        self.candidates.iter().map(|c| c.loss).min_by(f64::total_cmp)
    }

    fn take_request_id(&mut self) -> u64 {
        let id = self.next_request_id;
        self.next_request_id += 1;
        id
    }

    fn note_loss(&mut self, loss: f64) {
        let best = self.telemetry.best_loss.get_or_insert(loss);
        if loss < *best {
            *best = loss;
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome<G> {
    /// Archive and final population, deduplicated and sorted by loss.
    pub final_models: Vec<Candidate<G>>,
    pub state: SearchState<G>,
}

/// Index drawn with probability proportional to `weights`.
pub fn roulette(weights: &[f64], rng: &mut RandomSource) -> usize {
    let total: f64 = weights.iter().sum();
    let mut target = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if target < *w {
            return i;
        }
        target -= w;
    }
    weights.len() - 1
}

/// Merges archive and population, keeps the best candidate per fingerprint
/// and orders by ascending loss.
pub fn final_models<S: SearchSpace>(space: &S, state: &SearchState<S::Genome>) -> Vec<Candidate<S::Genome>> {
    let mut all: Vec<Candidate<S::Genome>> = state.archive.iter().chain(&state.candidates).cloned().collect();
    all.sort_by(|a, b| a.loss.total_cmp(&b.loss));
    let mut seen = HashSet::new();
    all.retain(|c| seen.insert(space.fingerprint(&c.genome)));
    all
}

struct Trial<G> {
    slot: usize,
    request_id: u64,
    genome: G,
    fell_back: bool,
}

pub struct Engine<'a, S: SearchSpace, O> {
    space: &'a S,
    objective: &'a O,
    config: EngineConfig<S::Genome>,
    pool: rayon::ThreadPool,
}

impl<'a, S, O> Engine<'a, S, O>
where
    S: SearchSpace,
    O: Objective<S::Genome>,
{
    pub fn new(space: &'a S, objective: &'a O, config: EngineConfig<S::Genome>) -> Result<Self, EngineError> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallel_evals)
            .build()
            .map_err(|e| EngineError::Config {
                field: "engine.parallel_evals",
                reason: e.to_string(),
            })?;
        Ok(Self {
            space,
            objective,
            config,
            pool,
        })
    }

    pub fn config(&self) -> &EngineConfig<S::Genome> {
        &self.config
    }

    fn evaluate_all(&self, trials: &[Trial<S::Genome>]) -> Vec<TrialOutcome<S::Genome>> {
        self.pool.install(|| {
            trials
                .par_iter()
                .map(|t| self.objective.evaluate(t.request_id, &t.genome))
                .collect()
        })
    }

    fn record(
        &self,
        obs: &mut dyn Observer<S::Genome>,
        iteration: u32,
        phase: Phase,
        trial: &Trial<S::Genome>,
        outcome: &TrialOutcome<S::Genome>,
        accepted: bool,
    ) {
        let (status, loss, genome) = match outcome {
            TrialOutcome::Scored { loss, genome } => (EvalStatus::Ok, Some(*loss), genome),
            TrialOutcome::Failed(s) => (*s, None, &trial.genome),
            TrialOutcome::Violation(_) => (EvalStatus::Invalid, None, &trial.genome),
        };
        obs.on_evaluation(&EvaluationRecord {
            iteration,
            phase,
            slot: trial.slot,
            request_id: trial.request_id,
            fingerprint: self.space.fingerprint(genome),
            lineage: self.space.lineage(genome),
            status,
            loss,
            accepted,
            fell_back: trial.fell_back,
        });
    }

    /// Fills `slots` with evaluated candidates produced by `generate`,
    /// regenerating any whose evaluation fails.
    fn fresh_candidates(
        &self,
        state: &mut SearchState<S::Genome>,
        slots: &[usize],
        phase: Phase,
        obs: &mut dyn Observer<S::Genome>,
        mut generate: impl FnMut(usize, &mut RandomSource) -> Result<Neighbor<S::Genome>, EngineError>,
    ) -> Result<Vec<Candidate<S::Genome>>, EngineError> {
        let iteration = if phase == Phase::Init { 0 } else { state.iteration + 1 };
        let mut done: Vec<Option<Candidate<S::Genome>>> = vec![None; slots.len()];
        for _attempt in 0..MAX_FRESH_ATTEMPTS {
            let pending: Vec<usize> = (0..slots.len()).filter(|&i| done[i].is_none()).collect();
            if pending.is_empty() {
                break;
            }
            let mut trials = Vec::with_capacity(pending.len());
            for &i in &pending {
                let n = generate(slots[i], &mut state.rng)?;
                trials.push(Trial {
                    slot: slots[i],
                    request_id: state.take_request_id(),
                    genome: n.genome,
                    fell_back: n.fell_back,
                });
            }
            let outcomes = self.evaluate_all(&trials);
            state.telemetry.evals_total += trials.len() as u64;
            for ((trial, outcome), &i) in trials.iter().zip(&outcomes).zip(&pending) {
                self.record(obs, iteration, phase, trial, outcome, outcome_is_scored(outcome));
                match outcome {
                    TrialOutcome::Scored { loss, genome } => {
                        done[i] = Some(Candidate::fresh(genome.clone(), *loss, trial.request_id)?);
                        state.note_loss(*loss);
                    }
                    TrialOutcome::Failed(_) => state.telemetry.failures += 1,
                    TrialOutcome::Violation(msg) => return Err(EngineError::ContractViolation(msg.clone())),
                }
            }
        }
        done.into_iter()
            .zip(slots)
            .map(|(c, &slot)| {
                c.ok_or(EngineError::Evaluation {
                    slot,
                    attempts: MAX_FRESH_ATTEMPTS,
                })
            })
            .collect()
    }

    /// Builds and evaluates the initial population.
    pub fn initialize(&self, obs: &mut dyn Observer<S::Genome>) -> Result<SearchState<S::Genome>, EngineError> {
        let mut state = SearchState {
            candidates: Vec::new(),
            archive: Vec::new(),
            iteration: 0,
            rng: RandomSource::seed_from_u64(self.config.rng_seed),
            next_request_id: 0,
            telemetry: Telemetry::default(),
        };
        let slots: Vec<usize> = (0..self.config.population_size).collect();
        let space = self.space;
        let candidates = match &self.config.seed_genome {
            Some(seed) => self.fresh_candidates(&mut state, &slots, Phase::Init, obs, |slot, rng| {
                Ok(if slot == 0 {
                    Neighbor {
                        genome: seed.clone(),
                        fell_back: false,
                    }
                } else {
                    space.neighbor(seed, 0, rng)
                })
            })?,
            None => self.fresh_candidates(&mut state, &slots, Phase::Init, obs, |_, rng| {
                Ok(Neighbor {
                    genome: space.random(rng)?,
                    fell_back: false,
                })
            })?,
        };
        state.candidates = candidates;
        Ok(state)
    }

    /// Compares trial outcomes against their slots in order.
    fn apply_trials(
        &self,
        state: &mut SearchState<S::Genome>,
        phase: Phase,
        trials: &[Trial<S::Genome>],
        outcomes: &[TrialOutcome<S::Genome>],
        obs: &mut dyn Observer<S::Genome>,
    ) -> Result<(), EngineError> {
        let iteration = state.iteration + 1;
        state.telemetry.evals_total += trials.len() as u64;
        for (trial, outcome) in trials.iter().zip(outcomes) {
            if trial.fell_back {
                state.telemetry.fallbacks += 1;
            }
            let incumbent_loss = state.candidates[trial.slot].loss;
            let accepted = match outcome {
                TrialOutcome::Scored { loss, .. } => {
                    fitness(*loss)?;
                    *loss < incumbent_loss
                }
                TrialOutcome::Failed(_) => {
                    state.telemetry.failures += 1;
                    false
                }
                TrialOutcome::Violation(msg) => return Err(EngineError::ContractViolation(msg.clone())),
            };
            self.record(obs, iteration, phase, trial, outcome, accepted);
            if let (true, TrialOutcome::Scored { loss, genome }) = (accepted, outcome) {
                state.candidates[trial.slot] = Candidate::fresh(genome.clone(), *loss, trial.request_id)?;
                state.note_loss(*loss);
            } else {
                state.candidates[trial.slot].exhaustion += 1;
            }
        }
        Ok(())
    }

    /// One trial per candidate, then archival and reinitialization of
    /// exhausted candidates.
    pub fn employed_phase(
        &self,
        state: &mut SearchState<S::Genome>,
        obs: &mut dyn Observer<S::Genome>,
    ) -> Result<(), EngineError> {
        let mut trials = Vec::with_capacity(state.candidates.len());
        for slot in 0..state.candidates.len() {
            let n = self.space.neighbor(
                &state.candidates[slot].genome,
                state.candidates[slot].exhaustion,
                &mut state.rng,
            );
            trials.push(Trial {
                slot,
                request_id: state.take_request_id(),
                genome: n.genome,
                fell_back: n.fell_back,
            });
        }
        let outcomes = self.evaluate_all(&trials);
        self.apply_trials(state, Phase::Employed, &trials, &outcomes, obs)?;

        let Some(limit) = self.config.max_exhaustion else {
            return Ok(());
        };
        let exhausted: Vec<usize> = (0..state.candidates.len())
            .filter(|&i| state.candidates[i].exhaustion >= limit)
            .collect();
        if exhausted.is_empty() {
            return Ok(());
        }
        for &slot in &exhausted {
            state.archive.push(state.candidates[slot].clone());
        }
        let space = self.space;
        let fresh = self.fresh_candidates(state, &exhausted, Phase::Reinit, obs, |_, rng| {
            Ok(Neighbor {
                genome: space.random(rng)?,
                fell_back: false,
            })
        })?;
        state.telemetry.reinitializations += fresh.len() as u64;
        for (slot, c) in exhausted.into_iter().zip(fresh) {
            state.candidates[slot] = c;
        }
        Ok(())
    }

    /// `Np` roulette draws over the current fitness vector, each followed by
    /// one trial against the drawn candidate.
    pub fn onlooker_phase(
        &self,
        state: &mut SearchState<S::Genome>,
        obs: &mut dyn Observer<S::Genome>,
    ) -> Result<(), EngineError> {
        let weights: Vec<f64> = state.candidates.iter().map(|c| c.fitness).collect();
        let draws: Vec<usize> = (0..state.candidates.len())
            .map(|_| roulette(&weights, &mut state.rng))
            .collect();
        let mut trials = Vec::with_capacity(draws.len());
        for slot in draws {
            let n = self.space.neighbor(
                &state.candidates[slot].genome,
                state.candidates[slot].exhaustion,
                &mut state.rng,
            );
            trials.push(Trial {
                slot,
                request_id: state.take_request_id(),
                genome: n.genome,
                fell_back: n.fell_back,
            });
        }
        let outcomes = self.evaluate_all(&trials);
        self.apply_trials(state, Phase::Onlooker, &trials, &outcomes, obs)
    }

    pub fn check_stop(&self, state: &SearchState<S::Genome>) -> bool {
        if state.iteration >= self.config.max_iter {
            return true;
        }
        match (self.config.loss_threshold, state.min_loss()) {
            (Some(t), Some(best)) => best < t,
            _ => false,
        }
    }

    /// Runs one full iteration (employed + onlooker) and records it.
    pub fn step(
        &self,
        state: &mut SearchState<S::Genome>,
        obs: &mut dyn Observer<S::Genome>,
    ) -> Result<(), EngineError> {
        self.employed_phase(state, obs)?;
        self.onlooker_phase(state, obs)?;
        state.iteration += 1;
        let losses: Vec<f64> = state.candidates.iter().map(|c| c.loss).collect();
        let record = IterationRecord {
            iteration: state.iteration,
            best_loss: state.telemetry.best_loss.unwrap_or(f64::INFINITY),
            mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            worst_loss: losses.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            archive_size: state.archive.len(),
            evals_total: state.telemetry.evals_total,
        };
        state.telemetry.history.push(record.clone());
        obs.on_iteration(&record, state);
        Ok(())
    }

    pub fn run(&self, obs: &mut dyn Observer<S::Genome>) -> Result<SearchOutcome<S::Genome>, EngineError> {
        let state = self.initialize(obs)?;
        self.resume(state, obs)
    }

    /// Continues a search from `state` until a stop criterion holds.
    pub fn resume(
        &self,
        mut state: SearchState<S::Genome>,
        obs: &mut dyn Observer<S::Genome>,
    ) -> Result<SearchOutcome<S::Genome>, EngineError> {
        if state.candidates.len() != self.config.population_size {
            return Err(EngineError::Config {
                field: "engine.population_size",
                reason: format!(
                    "state holds {} candidates, config expects {}",
                    state.candidates.len(),
                    self.config.population_size
                ),
            });
        }
        while !self.check_stop(&state) {
            let boundary = state.clone();
            if let Err(e) = self.step(&mut state, obs) {
                obs.on_abort(&boundary, &e);
                return Err(e);
            }
        }
        Ok(SearchOutcome {
            final_models: final_models(self.space, &state),
            state,
        })
    }
}

fn outcome_is_scored<G>(o: &TrialOutcome<G>) -> bool {
    matches!(o, TrialOutcome::Scored { .. })
}

/// Uniform random sampling with the same evaluation budget, as a baseline.
/// Returns the best loss found (infinity if every evaluation failed).
pub fn random_search<S, O>(space: &S, objective: &O, evaluations: u64, rng_seed: u64) -> Result<f64, EngineError>
where
    S: SearchSpace,
    O: Objective<S::Genome>,
{
    let mut rng = RandomSource::seed_from_u64(rng_seed);
    let mut best = f64::INFINITY;
    for id in 0..evaluations {
        let g = space.random(&mut rng)?;
        match objective.evaluate(id, &g) {
            TrialOutcome::Scored { loss, .. } => best = best.min(loss),
            TrialOutcome::Failed(_) => {}
            TrialOutcome::Violation(msg) => return Err(EngineError::ContractViolation(msg)),
        }
    }
    Ok(best)
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptSnapshot(String),
}

#[derive(Serialize, Deserialize)]
struct Snapshot<G> {
    format: String,
    version: u32,
    context: serde_json::Value,
    state: SearchState<G>,
}

/// Serializes `state` together with an opaque `context` (for instance the
/// run configuration) into a versioned snapshot.
pub fn checkpoint<G: Serialize + Clone>(state: &SearchState<G>, context: serde_json::Value) -> String {
    let snap = Snapshot {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        context,
        state: state.clone(),
    };
    serde_json::to_string(&snap).expect("search state always serializes")
}

/// Inverse of [`checkpoint`]. Returns the state and its context.
pub fn restore<G: DeserializeOwned>(snapshot: &str) -> Result<(SearchState<G>, serde_json::Value), CheckpointError> {
    let raw: serde_json::Value =
        serde_json::from_str(snapshot).map_err(|e| CheckpointError::CorruptSnapshot(e.to_string()))?;
    if raw.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
        return Err(CheckpointError::CorruptSnapshot("missing checkpoint format tag".into()));
    }
    let version = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CheckpointError::CorruptSnapshot("missing version".into()))?;
    if version != u64::from(CHECKPOINT_VERSION) {
        return Err(CheckpointError::VersionMismatch {
            found: version as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let snap: Snapshot<G> = serde_json::from_value(raw).map_err(|e| CheckpointError::CorruptSnapshot(e.to_string()))?;
    Ok((snap.state, snap.context))
}
