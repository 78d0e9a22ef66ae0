//! Run configuration file.
//!
//! TOML with four sections:
//!
//! ```toml
//! [engine]
//! population_size = 4
//! max_iter = 16
//! max_exhaustion = 10        # omit for no exhaustion limit
//! loss_threshold = 0.05      # optional
//! rng_seed = 7
//! parallel_evals = 1
//! seed_genome = "base.json"  # optional, relative to this file
//!
//! [mutation]
//! p_add = 0.3
//! p_remove = 0.3
//! p_modify = 0.3
//! p_reseed = 0.1
//! kernel_min = 1
//! kernel_max = 7
//! max_retries = 16
//!
//! [bounds]
//! input_shape = [3, 32, 32]
//! output_arity = 10
//! max_layers = 12
//!
//! [evaluator]
//! kind = "surrogate"         # surrogate | external | stub
//! ```
//!
//! Genome references (`engine.seed_genome`, `evaluator.target`) are resolved
//! to inline genomes on load, so a loaded config is self-contained.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::engine::EngineConfig;
use crate::evaluator::{
    Budget, Caching, CommandSpec, Evaluator, EvaluatorError, ExternalProcess, StubEvaluator, SurrogateLandscape,
};
use crate::genome::{Genome, LayerSpec, LineageId, SearchBounds};
use crate::mutation::MutationConfig;
use crate::repair::is_congruent;
use crate::space::ArchitectureSpace;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GenomeRef {
    Inline(Box<Genome>),
    Path(PathBuf),
}

impl GenomeRef {
    pub fn genome(&self) -> Option<&Genome> {
        match self {
            GenomeRef::Inline(g) => Some(g),
            GenomeRef::Path(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    pub population_size: usize,
    pub max_iter: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_exhaustion: Option<u32>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_parallel")]
    pub parallel_evals: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_genome: Option<GenomeRef>,
}

fn default_parallel() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    Surrogate,
    External,
    Stub,
}

impl std::str::FromStr for EvaluatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "surrogate" => Ok(Self::Surrogate),
            "external" => Ok(Self::External),
            "stub" => Ok(Self::Stub),
            other => Err(format!("unknown evaluator `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluatorSection {
    pub kind: EvaluatorKind,
    #[serde(default = "default_true")]
    pub cache: bool,
    /// Surrogate target; defaults to [`reference_target`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<GenomeRef>,
    /// External worker command line: program followed by arguments.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub command: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Stub loss; absent means a fingerprint-derived loss.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stub_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<u32>,
}

fn default_true() -> bool {
    true
}

fn default_timeout() -> f64 {
    3600.0
}

impl EvaluatorSection {
    pub fn new(kind: EvaluatorKind) -> Self {
        Self {
            kind,
            cache: true,
            target: None,
            command: Vec::new(),
            timeout_secs: default_timeout(),
            stub_loss: None,
            max_epochs: None,
            patience: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub engine: EngineSection,
    #[serde(default)]
    pub mutation: MutationConfig,
    pub bounds: SearchBounds,
    pub evaluator: EvaluatorSection,
}

/// An eight-layer VGG-style stack used as the default surrogate target.
pub fn reference_target(bounds: &SearchBounds) -> Genome {
    let conv = |seed| LayerSpec::conv([3, 3], bounds.conv_stride, [1, 1], seed);
    let pool = LayerSpec::max_pool([2, 2], bounds.pool_stride.unwrap_or([2, 2]), [0, 0]);
    Genome::new(
        bounds,
        vec![
            conv(1),
            LayerSpec::relu(),
            conv(2),
            pool,
            conv(3),
            LayerSpec::relu(),
            conv(4),
            pool,
        ],
        LineageId::root("target"),
    )
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.resolve(base_dir)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("resolved config serializes to TOML")
    }

    fn resolve(&mut self, base_dir: &Path) -> Result<(), ConfigError> {
        fn load(r: &mut Option<GenomeRef>, base: &Path, field: &str) -> Result<(), ConfigError> {
            if let Some(GenomeRef::Path(p)) = r {
                let full = base.join(&*p);
                let text = std::fs::read_to_string(&full).map_err(|source| ConfigError::Io {
                    path: full.clone(),
                    source,
                })?;
                let g = Genome::from_json(&text).map_err(|e| ConfigError::invalid(field, e.to_string()))?;
                *r = Some(GenomeRef::Inline(Box::new(g)));
            }
            Ok(())
        }
        load(&mut self.engine.seed_genome, base_dir, "engine.seed_genome")?;
        load(&mut self.evaluator.target, base_dir, "evaluator.target")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.engine_config().validate().map_err(|e| match e {
            crate::engine::EngineError::Config { field, reason } => ConfigError::invalid(field, reason),
            other => ConfigError::invalid("engine", other.to_string()),
        })?;
        self.mutation.validate().map_err(|(f, r)| ConfigError::invalid(f, r))?;
        self.bounds.validate().map_err(|(f, r)| ConfigError::invalid(f, r))?;
        let check_genome = |r: &Option<GenomeRef>, field: &str| -> Result<(), ConfigError> {
            let Some(r) = r else { return Ok(()) };
            let g = r
                .genome()
                .ok_or_else(|| ConfigError::invalid(field, "genome path was not resolved"))?;
            g.validate().map_err(|e| ConfigError::invalid(field, e.to_string()))?;
            if g.input_shape != self.bounds.input_shape || g.output_arity != self.bounds.output_arity {
                return Err(ConfigError::invalid(
                    field,
                    "input_shape/output_arity differ from [bounds]",
                ));
            }
            if !is_congruent(g) {
                return Err(ConfigError::invalid(
                    field,
                    "genome is not congruent; repair it first (`chimera print-genome --repair`)",
                ));
            }
            Ok(())
        };
        check_genome(&self.engine.seed_genome, "engine.seed_genome")?;
        check_genome(&self.evaluator.target, "evaluator.target")?;
        if self.evaluator.target.is_none() && self.evaluator.kind == EvaluatorKind::Surrogate {
            reference_target(&self.bounds).validate().map_err(|e| {
                ConfigError::invalid(
                    "evaluator.target",
                    format!("default target does not fit the input shape ({e}); set one explicitly"),
                )
            })?;
        }
        if self.evaluator.kind == EvaluatorKind::External && self.evaluator.command.is_empty() {
            return Err(ConfigError::invalid(
                "evaluator.command",
                "external evaluator needs a command",
            ));
        }
        if !(self.evaluator.timeout_secs.is_finite() && self.evaluator.timeout_secs > 0.0) {
            return Err(ConfigError::invalid("evaluator.timeout_secs", "must be positive"));
        }
        if let Some(l) = self.evaluator.stub_loss {
            if !(l.is_finite() && l >= 0.0) {
                return Err(ConfigError::invalid("evaluator.stub_loss", "must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn engine_config(&self) -> EngineConfig<Genome> {
        EngineConfig {
            population_size: self.engine.population_size,
            max_iter: self.engine.max_iter,
            loss_threshold: self.engine.loss_threshold,
            max_exhaustion: self.engine.max_exhaustion,
            seed_genome: self.engine.seed_genome.as_ref().and_then(GenomeRef::genome).cloned(),
            rng_seed: self.engine.rng_seed,
            parallel_evals: self.engine.parallel_evals,
        }
    }

    pub fn space(&self) -> ArchitectureSpace {
        ArchitectureSpace::new(self.bounds.clone(), self.mutation.clone())
    }

    pub fn budget(&self) -> Option<Budget> {
        match (self.evaluator.max_epochs, self.evaluator.patience) {
            (None, None) => None,
            (e, p) => Some(Budget {
                max_epochs: e.unwrap_or(100),
                patience: p.unwrap_or(5),
            }),
        }
    }

    pub fn surrogate_target(&self) -> Genome {
        self.evaluator
            .target
            .as_ref()
            .and_then(GenomeRef::genome)
            .cloned()
            .unwrap_or_else(|| reference_target(&self.bounds))
    }

    /// Instantiates the configured evaluator, wrapped in a cache if enabled.
    pub fn build_evaluator(&self) -> Result<Box<dyn Evaluator>, EvaluatorError> {
        let inner: Box<dyn Evaluator> = match self.evaluator.kind {
            EvaluatorKind::Surrogate => Box::new(SurrogateLandscape::new(self.surrogate_target())),
            EvaluatorKind::Stub => Box::new(StubEvaluator {
                loss: self.evaluator.stub_loss,
            }),
            EvaluatorKind::External => {
                let (program, args) = self
                    .evaluator
                    .command
                    .split_first()
                    .expect("validated: command is non-empty");
                Box::new(ExternalProcess::spawn(
                    CommandSpec::new(program.clone(), args.iter().cloned()),
                    self.engine.parallel_evals,
                    Duration::from_secs_f64(self.evaluator.timeout_secs),
                )?)
            }
        };
        Ok(if self.evaluator.cache {
            Box::new(Caching::new(inner))
        } else {
            inner
        })
    }
}
