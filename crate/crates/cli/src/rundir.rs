//! Layout and writers for a run directory.
//!
//! ```text
//! <out>/manifest.json       run metadata, rewritten atomically
//! <out>/config.toml         resolved configuration snapshot
//! <out>/evaluations.jsonl   one EvaluationRecord per line
//! <out>/iterations.csv      one row per completed iteration
//! <out>/checkpoint.json     search state after the latest iteration
//! <out>/final_models.json   deduplicated models sorted by loss
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use chimera_core::engine::{checkpoint, Candidate, EngineError, SearchState};
use chimera_core::genome::genome_fingerprint;
use chimera_core::telemetry::{iterations_to_csv, EvaluationRecord, IterationRecord, Observer};
use chimera_core::{Genome, RunConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
pub const EVALUATIONS: &str = "evaluations.jsonl";
pub const ITERATIONS: &str = "iterations.csv";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const FINAL_MODELS: &str = "final_models.json";

pub const MANIFEST_FORMAT: &str = "chimera-run";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub engine_version: String,
    pub rng_seed: u64,
    pub status: RunStatus,
    pub started_at_unix: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at_unix: Option<u64>,
    #[serde(default)]
    pub resumes: u32,
    pub iterations_completed: u32,
    pub evals_total: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<serde_json::Value>,
    pub artifacts: Vec<Artifact>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes `contents` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let write = || -> std::io::Result<()> {
        let mut f = File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| CliError::io(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Entry of `final_models.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalModel {
    pub rank: usize,
    pub loss: f64,
    pub fitness: f64,
    pub fingerprint: String,
    pub eval_id: u64,
    pub genome: Genome,
}

pub fn final_models_json(models: &[Candidate<Genome>]) -> String {
    let rows: Vec<FinalModel> = models
        .iter()
        .enumerate()
        .map(|(rank, c)| FinalModel {
            rank,
            loss: c.loss,
            fitness: c.fitness,
            fingerprint: genome_fingerprint(&c.genome).to_string(),
            eval_id: c.eval_id,
            genome: c.genome.clone(),
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&rows).expect("final models serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Creates the directory. Refuses to reuse one that already holds a run.
    pub fn create(&self) -> Result<(), CliError> {
        if self.path(MANIFEST).exists() {
            return Err(CliError::Usage(format!(
                "{} already holds a run; resume it or choose another --out",
                self.root.display()
            )));
        }
        fs::create_dir_all(&self.root).map_err(|e| CliError::io(&self.root, e))
    }

    pub fn read_manifest(&self) -> Result<Manifest, CliError> {
        let path = self.path(MANIFEST);
        let text = read_artifact(&path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn write_manifest(&self, manifest: &Manifest) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        text.push('\n');
        write_atomic(&self.path(MANIFEST), text.as_bytes())
    }

    pub fn write_config(&self, config: &RunConfig) -> Result<(), CliError> {
        write_atomic(&self.path(CONFIG), config.to_toml().as_bytes())
    }

    pub fn new_manifest(&self, config: &RunConfig) -> Manifest {
        Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            engine_version: env!("CARGO_PKG_VERSION").into(),
            rng_seed: config.engine.rng_seed,
            status: RunStatus::Running,
            started_at_unix: unix_now(),
            finished_at_unix: None,
            resumes: 0,
            iterations_completed: 0,
            evals_total: 0,
            best_loss: None,
            error: None,
            artifacts: [CONFIG, EVALUATIONS, ITERATIONS, CHECKPOINT, FINAL_MODELS]
                .iter()
                .map(|p| Artifact {
                    path: p.to_string(),
                    sha256: None,
                })
                .collect(),
        }
    }

    /// Fills in the digest of every artifact that exists.
    pub fn seal(&self, manifest: &mut Manifest) -> Result<(), CliError> {
        for a in &mut manifest.artifacts {
            let path = self.path(&a.path);
            a.sha256 = match fs::read(&path) {
                Ok(bytes) => Some(sha256_hex(&bytes)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
                Err(e) => return Err(CliError::io(&path, e)),
            };
        }
        Ok(())
    }

    /// Drops evaluation records that belong to iterations after `iteration`,
    /// plus any trailing line that does not parse (an interrupted write).
    pub fn truncate_evaluations(&self, iteration: u32) -> Result<usize, CliError> {
        let path = self.path(EVALUATIONS);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
            Err(e) => return Err(CliError::io(&path, e)),
        };
        let mut kept = String::new();
        let mut dropped = 0;
        let mut lines = BufReader::new(file).lines();
        while let Some(line) = lines.next() {
            let line = line.map_err(|e| CliError::io(&path, e))?;
            match serde_json::from_str::<EvaluationRecord>(&line) {
                Ok(r) if r.iteration <= iteration => {
                    kept.push_str(&line);
                    kept.push('\n');
                }
                Ok(_) => dropped += 1,
                Err(_) => {
                    dropped += 1 + lines.count();
                    break;
                }
            }
        }
        write_atomic(&path, kept.as_bytes())?;
        Ok(dropped)
    }
}

pub fn read_artifact(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingArtifact(path.to_path_buf())
        } else {
            CliError::io(path, e)
        }
    })
}

/// Streams engine events into the run directory. Write failures are kept
/// and reported once the engine returns, since observers cannot fail.
pub struct RunObserver {
    dir: RunDir,
    context: serde_json::Value,
    evaluations: File,
    quiet: bool,
    max_iter: u32,
    pub error: Option<CliError>,
}

impl RunObserver {
    pub fn open(dir: &RunDir, config: &RunConfig, quiet: bool) -> Result<Self, CliError> {
        let path = dir.path(EVALUATIONS);
        let evaluations = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| CliError::io(&path, e))?;
        Ok(Self {
            dir: dir.clone(),
            context: serde_json::to_value(config).expect("config serializes"),
            evaluations,
            quiet,
            max_iter: config.engine.max_iter,
            error: None,
        })
    }

    fn keep(&mut self, r: Result<(), CliError>) {
        if let (Err(e), None) = (r, &self.error) {
            self.error = Some(e);
        }
    }

    pub fn write_checkpoint(&mut self, state: &SearchState<Genome>) {
        let text = checkpoint(state, self.context.clone());
        let r = write_atomic(&self.dir.path(CHECKPOINT), text.as_bytes());
        self.keep(r);
    }

    fn write_iterations(&mut self, state: &SearchState<Genome>) {
        let csv = iterations_to_csv(&state.telemetry.history);
        let r = write_atomic(&self.dir.path(ITERATIONS), csv.as_bytes());
        self.keep(r);
    }
}

impl Observer<Genome> for RunObserver {
    fn on_evaluation(&mut self, record: &EvaluationRecord) {
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        let path = self.dir.path(EVALUATIONS);
        let r = self
            .evaluations
            .write_all(line.as_bytes())
            .map_err(|e| CliError::io(&path, e));
        self.keep(r);
    }

    fn on_iteration(&mut self, record: &IterationRecord, state: &SearchState<Genome>) {
        let path = self.dir.path(EVALUATIONS);
        let r = self.evaluations.flush().map_err(|e| CliError::io(&path, e));
        self.keep(r);
        self.write_iterations(state);
        self.write_checkpoint(state);
        if !self.quiet {
            log::info!(
                "iteration {}/{} best_loss={:.6} mean_loss={:.6} archive={} evals={}",
                record.iteration,
                self.max_iter,
                record.best_loss,
                record.mean_loss,
                record.archive_size,
                record.evals_total
            );
        }
    }

    fn on_abort(&mut self, state: &SearchState<Genome>, error: &EngineError) {
        log::error!("search aborted after iteration {}: {error}", state.iteration);
        self.write_iterations(state);
        self.write_checkpoint(state);
    }
}
