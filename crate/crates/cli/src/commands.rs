use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chimera_core::config::EvaluatorKind;
use chimera_core::engine::{restore, SearchState};
use chimera_core::genome::{genome_fingerprint, infer_shapes};
use chimera_core::repair::{is_congruent, repair};
use chimera_core::telemetry::{iterations_to_csv, IterationRecord};
use chimera_core::{ArchitectureObjective, Engine, Genome, RunConfig};
use serde_json::json;

use crate::error::CliError;
use crate::rundir::{
    final_models_json, read_artifact, unix_now, write_atomic, RunDir, RunObserver, RunStatus, CHECKPOINT, FINAL_MODELS,
};

pub const WORKERS_ENV: &str = "CHIMERA_WORKERS";

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub evaluator: Option<EvaluatorKind>,
    pub max_iter: Option<u32>,
}

fn workers_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("{WORKERS_ENV}={v} is not a positive integer"))),
        },
        Err(_) => Ok(None),
    }
}

fn apply_overrides(config: &mut RunConfig, o: &Overrides) -> Result<(), CliError> {
    if let Some(seed) = o.seed {
        config.engine.rng_seed = seed;
    }
    if let Some(kind) = o.evaluator {
        config.evaluator.kind = kind;
    }
    if let Some(n) = o.max_iter {
        config.engine.max_iter = n;
    }
    if let Some(n) = workers_from_env()? {
        config.engine.parallel_evals = n;
    }
    config.validate()?;
    Ok(())
}

pub fn load_config(path: &Path, o: &Overrides) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(path)?;
    apply_overrides(&mut config, o)?;
    Ok(config)
}

/// Drives the engine from `state` (or from scratch) and finalizes the run
/// directory either way.
fn drive(dir: &RunDir, config: &RunConfig, state: Option<SearchState<Genome>>, quiet: bool) -> Result<(), CliError> {
    let mut manifest = dir.read_manifest()?;
    let space = config.space();
    let evaluator = config.build_evaluator()?;
    let objective = ArchitectureObjective::new(evaluator, config.budget());
    let engine = Engine::new(&space, &objective, config.engine_config())?;
    let mut obs = RunObserver::open(dir, config, quiet)?;

    let result = (|| {
        let state = match state {
            Some(s) => s,
            None => {
                let s = engine.initialize(&mut obs)?;
                obs.write_checkpoint(&s);
                s
            }
        };
        engine.resume(state, &mut obs)
    })();
    if let Some(e) = obs.error.take() {
        return Err(e);
    }

    manifest.finished_at_unix = Some(unix_now());
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            let err = CliError::Engine(e);
            manifest.status = RunStatus::Failed;
            manifest.error = Some(err.record()["error"].clone());
            dir.seal(&mut manifest)?;
            dir.write_manifest(&manifest)?;
            return Err(err);
        }
    };
    write_atomic(
        &dir.path(FINAL_MODELS),
        final_models_json(&outcome.final_models).as_bytes(),
    )?;
    let t = &outcome.state.telemetry;
    manifest.status = RunStatus::Completed;
    manifest.error = None;
    manifest.iterations_completed = outcome.state.iteration;
    manifest.evals_total = t.evals_total;
    manifest.best_loss = t.best_loss;
    dir.seal(&mut manifest)?;
    dir.write_manifest(&manifest)?;
    if !quiet {
        log::info!(
            "finished after {} iterations and {} evaluations ({} failed, {} reinitializations); best loss {}",
            outcome.state.iteration,
            t.evals_total,
            t.failures,
            t.reinitializations,
            t.best_loss.map_or("n/a".to_string(), |b| format!("{b:.6}")),
        );
    }
    Ok(())
}

pub fn run(config_path: &Path, out: &Path, o: &Overrides, quiet: bool) -> Result<(), CliError> {
    let config = load_config(config_path, o)?;
    let dir = RunDir::new(out);
    dir.create()?;
    dir.write_config(&config)?;
    dir.write_manifest(&dir.new_manifest(&config))?;
    drive(&dir, &config, None, quiet)
}

fn read_checkpoint(path: &Path) -> Result<(SearchState<Genome>, RunConfig), CliError> {
    let text = read_artifact(path)?;
    let (state, context) = restore::<Genome>(&text)?;
    let config: RunConfig = serde_json::from_value(context)
        .map_err(|e| chimera_core::engine::CheckpointError::CorruptSnapshot(format!("embedded config: {e}")))?;
    Ok((state, config))
}

/// Continues the run that owns `checkpoint_path`. `max_iter` may extend a
/// run that already finished.
pub fn resume(checkpoint_path: &Path, o: &Overrides, quiet: bool) -> Result<(), CliError> {
    let (state, mut config) = read_checkpoint(checkpoint_path)?;
    if o.seed.is_some() || o.evaluator.is_some() {
        return Err(CliError::Usage("a resumed run keeps its seed and evaluator".into()));
    }
    apply_overrides(&mut config, o)?;
    let root = checkpoint_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let dir = RunDir::new(root);
    let mut manifest = dir.read_manifest()?;
    let dropped = dir.truncate_evaluations(state.iteration)?;
    if dropped > 0 {
        log::warn!(
            "dropped {dropped} evaluation records past iteration {}",
            state.iteration
        );
    }
    dir.write_config(&config)?;
    manifest.status = RunStatus::Running;
    manifest.finished_at_unix = None;
    manifest.error = None;
    manifest.resumes += 1;
    dir.write_manifest(&manifest)?;
    if !quiet {
        log::info!("resuming {} at iteration {}", dir.root.display(), state.iteration);
    }
    drive(&dir, &config, Some(state), quiet)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportFormat {
    Csv,
    Json,
}

pub fn export_history(run_dir: &Path) -> Result<Vec<IterationRecord>, CliError> {
    let (state, _) = read_checkpoint(&run_dir.join(CHECKPOINT))?;
    if state.telemetry.history.is_empty() {
        return Err(CliError::NothingToExport(format!(
            "{} has no completed iterations",
            run_dir.display()
        )));
    }
    Ok(state.telemetry.history)
}

pub fn export(run_dir: &Path, format: ExportFormat) -> Result<String, CliError> {
    let history = export_history(run_dir)?;
    Ok(match format {
        ExportFormat::Csv => iterations_to_csv(&history),
        ExportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&history).expect("history serializes");
            s.push('\n');
            s
        }
    })
}

pub fn validate_config(config_path: &Path, o: &Overrides) -> Result<String, CliError> {
    let c = load_config(config_path, o)?;
    let summary = json!({
        "ok": true,
        "population_size": c.engine.population_size,
        "max_iter": c.engine.max_iter,
        "max_exhaustion": c.engine.max_exhaustion,
        "rng_seed": c.engine.rng_seed,
        "parallel_evals": c.engine.parallel_evals,
        "evaluator": c.evaluator.kind,
        "seeded": c.engine.seed_genome.is_some(),
    });
    Ok(format!("{summary}\n"))
}

fn load_genome(path: &Path) -> Result<Genome, CliError> {
    let text = read_artifact(path)?;
    Genome::from_json(&text).map_err(|e| CliError::Genome(format!("{}: {e}", path.display())))
}

/// Layer table with the shape after every layer. With `repair_first`, the
/// repaired genome JSON follows the table.
pub fn print_genome(path: &Path, repair_first: bool) -> Result<String, CliError> {
    let mut genome = load_genome(path)?;
    if repair_first {
        genome = repair(&genome).map_err(|e| CliError::Genome(e.to_string()))?;
    }
    genome.validate().map_err(|e| CliError::Genome(e.to_string()))?;
    let trace = infer_shapes(&genome).map_err(|e| CliError::Genome(e.to_string()))?;
    let mut out = String::new();
    let _ = writeln!(out, "fingerprint  {}", genome_fingerprint(&genome));
    let _ = writeln!(out, "lineage      {}", genome.lineage_id);
    let _ = writeln!(out, "lr_hint      {}", genome.lr_hint);
    let _ = writeln!(
        out,
        "layers       {} ({} structural), congruent: {}",
        genome.layers.len(),
        genome.structural_len(),
        if is_congruent(&genome) { "yes" } else { "no" }
    );
    let _ = writeln!(out, "{:>3}  {:<40} output", "#", "layer");
    let _ = writeln!(out, "{:>3}  {:<40} {}", "-", "input", trace.0[0]);
    for (i, (layer, shape)) in genome.layers.iter().zip(&trace.0[1..]).enumerate() {
        let _ = writeln!(out, "{i:>3}  {:<40} {shape}", layer.to_string());
    }
    let _ = writeln!(out, "dense -> {}", genome.output_arity);
    if repair_first {
        out.push_str(&genome.to_json());
        out.push('\n');
    }
    Ok(out)
}
