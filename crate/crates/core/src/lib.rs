//! Artificial bee colony search over feedforward CNN architectures.
//!
//! Architectures are encoded as [`Genome`]s: ordered stacks of convolution,
//! pooling and ReLU layers. The [`engine`] explores them with employed and
//! onlooker bees that mutate candidates ([`mutation`]), keep every mutant
//! congruent ([`repair`]) and score them through a pluggable black-box
//! [`evaluator`].

pub mod config;
pub mod continuous;
pub mod engine;
pub mod evaluator;
pub mod genome;
pub mod mutation;
pub mod repair;
pub mod rng;
pub mod space;
pub mod telemetry;

pub use config::RunConfig;
pub use engine::{Candidate, Engine, EngineConfig, EngineError, SearchOutcome, SearchState};
pub use evaluator::{EvaluationRequest, EvaluationResult, Evaluator};
pub use genome::{Genome, LayerSpec, SearchBounds, Shape};
pub use mutation::{MutationConfig, MutationKind};
pub use rng::RandomSource;
pub use space::{ArchitectureObjective, ArchitectureSpace};
