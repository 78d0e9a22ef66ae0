use std::path::{Path, PathBuf};

use chimera_core::config::ConfigError;
use chimera_core::engine::{CheckpointError, EngineError};
use chimera_core::evaluator::EvaluatorError;
use serde_json::{json, Value};

/// Everything a subcommand can fail with. Each variant maps to a stable
/// `kind` string and exit status in the error record.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Evaluator(#[from] EvaluatorError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Genome(String),
    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("{0}")]
    NothingToExport(String),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Evaluator(_) => "evaluator",
            CliError::Engine(EngineError::Config { .. }) => "config",
            CliError::Engine(_) => "engine",
            CliError::Checkpoint(CheckpointError::VersionMismatch { .. }) => "checkpoint_version",
            CliError::Checkpoint(CheckpointError::CorruptSnapshot(_)) => "checkpoint_corrupt",
            CliError::Genome(_) => "genome",
            CliError::MissingArtifact(_) | CliError::NothingToExport(_) => "missing_artifact",
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" | "usage" | "genome" => 2,
            "evaluator" => 3,
            "engine" => 4,
            "checkpoint_version" | "checkpoint_corrupt" => 5,
            _ => 6,
        }
    }

    /// Single-line JSON error record written to stderr.
    pub fn record(&self) -> Value {
        let mut err = json!({ "kind": self.kind(), "message": self.to_string() });
        let field = match self {
            CliError::Config(e) => e.field().map(str::to_string),
            CliError::Engine(EngineError::Config { field, .. }) => Some(field.to_string()),
            _ => None,
        };
        if let Some(f) = field {
            err["field"] = json!(f);
        }
        match self {
            CliError::MissingArtifact(p) | CliError::Io { path: p, .. } => err["path"] = json!(p),
            _ => {}
        }
        json!({ "error": err })
    }
}
