//! Binds CNN genomes and the evaluator contract to the generic engine.

use crate::engine::{EngineError, Neighbor, Objective, SearchSpace, TrialOutcome};
use crate::evaluator::{Budget, EvalStatus, EvaluationRequest, Evaluator};
use crate::genome::{genome_fingerprint, random_genome, Fingerprint, Genome, SearchBounds};
use crate::mutation::{mutate, MutationConfig};
use crate::rng::RandomSource;

#[derive(Debug, Clone)]
pub struct ArchitectureSpace {
    pub bounds: SearchBounds,
    pub mutation: MutationConfig,
}

impl ArchitectureSpace {
    pub fn new(bounds: SearchBounds, mutation: MutationConfig) -> Self {
        Self { bounds, mutation }
    }
}

impl SearchSpace for ArchitectureSpace {
    type Genome = Genome;

    fn random(&self, rng: &mut RandomSource) -> Result<Genome, EngineError> {
        random_genome(&self.bounds, &self.mutation, rng).map_err(|e| EngineError::Generation(e.to_string()))
    }

    fn neighbor(&self, parent: &Genome, exhaustion: u32, rng: &mut RandomSource) -> Neighbor<Genome> {
        let m = mutate(parent, exhaustion, &self.mutation, &self.bounds, rng);
        Neighbor {
            genome: m.genome,
            fell_back: m.fell_back,
        }
    }

    fn fingerprint(&self, genome: &Genome) -> Fingerprint {
        genome_fingerprint(genome)
    }

    fn lineage(&self, genome: &Genome) -> String {
        genome.lineage_id.to_string()
    }
}

/// Turns evaluator responses into engine outcomes.
///
/// The learning-rate window is derived from the genome's inherited
/// `lr_hint`; on success the chosen rate becomes the hint its offspring
/// inherit. Responses with a foreign request id, a negative or non-finite
/// loss, or a learning rate outside the window are contract violations.
pub struct ArchitectureObjective<E> {
    evaluator: E,
    budget: Option<Budget>,
}

impl<E: Evaluator> ArchitectureObjective<E> {
    pub fn new(evaluator: E, budget: Option<Budget>) -> Self {
        Self { evaluator, budget }
    }

    pub fn evaluator(&self) -> &E {
        &self.evaluator
    }
}

impl<E: Evaluator> Objective<Genome> for ArchitectureObjective<E> {
    fn evaluate(&self, request_id: u64, genome: &Genome) -> TrialOutcome<Genome> {
        let request = EvaluationRequest::for_genome(request_id, genome.clone(), self.budget);
        let result = self.evaluator.evaluate(&request);
        if result.request_id != request_id {
            return TrialOutcome::Violation(format!(
                "response id {} does not match request {request_id}",
                result.request_id
            ));
        }
        match result.status {
            EvalStatus::Ok => {}
            other => return TrialOutcome::Failed(other),
        }
        let (Some(loss), Some(lr)) = (result.val_loss, result.chosen_lr) else {
            return TrialOutcome::Violation(format!("request {request_id}: ok result without val_loss/chosen_lr"));
        };
        if !(loss.is_finite() && loss >= 0.0) {
            return TrialOutcome::Violation(format!("request {request_id}: val_loss {loss} is not a valid loss"));
        }
        if !(request.lr_low..=request.lr_high).contains(&lr) {
            return TrialOutcome::Violation(format!(
                "request {request_id}: chosen_lr {lr} outside [{}, {}]",
                request.lr_low, request.lr_high
            ));
        }
        let mut genome = request.genome;
        genome.lr_hint = lr;
        TrialOutcome::Scored { loss, genome }
    }
}
