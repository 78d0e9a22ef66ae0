//! `chimera`: configure, launch, resume and inspect architecture searches.
//!
//! Failures print one JSON error record on stderr and exit nonzero:
//! 2 config/usage/genome, 3 evaluator, 4 engine, 5 checkpoint, 6 I/O or
//! missing artifact.

mod commands;
mod error;
mod rundir;

use std::io::Write;
use std::path::PathBuf;

use chimera_core::config::EvaluatorKind;
use clap::{Parser, Subcommand};

use commands::{ExportFormat, Overrides};
use error::CliError;

#[derive(Parser)]
#[command(name = "chimera", version, about = "Bee colony search over CNN architectures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a new search and write its run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run directory to create.
        #[arg(long, default_value = "chimera-run")]
        out: PathBuf,
        /// Overrides engine.rng_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides evaluator.kind.
        #[arg(long, value_parser = parse_kind)]
        evaluator: Option<EvaluatorKind>,
        #[arg(long)]
        quiet: bool,
    },
    /// Continue a run from its checkpoint.json.
    Resume {
        checkpoint: PathBuf,
        /// Raise engine.max_iter to extend a finished run.
        #[arg(long)]
        max_iter: Option<u32>,
        #[arg(long)]
        quiet: bool,
    },
    /// Print per-iteration convergence data of a run.
    Export {
        run_dir: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: ExportFormat,
        /// Write to a file instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Parse and validate a config file without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_kind)]
        evaluator: Option<EvaluatorKind>,
    },
    /// Show a genome's layers and shapes.
    PrintGenome {
        file: PathBuf,
        /// Repair first and also print the repaired genome as JSON.
        #[arg(long)]
        repair: bool,
    },
}

fn parse_kind(s: &str) -> Result<EvaluatorKind, String> {
    s.parse()
}

fn emit(text: &str, output: Option<&PathBuf>) -> Result<(), CliError> {
    match output {
        Some(p) => rundir::write_atomic(p, text.as_bytes()),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .map_err(|e| CliError::io(std::path::Path::new("<stdout>"), e))
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            evaluator,
            quiet,
        } => commands::run(
            &config,
            &out,
            &Overrides {
                seed,
                evaluator,
                max_iter: None,
            },
            quiet,
        ),
        Command::Resume {
            checkpoint,
            max_iter,
            quiet,
        } => commands::resume(
            &checkpoint,
            &Overrides {
                max_iter,
                ..Overrides::default()
            },
            quiet,
        ),
        Command::Export {
            run_dir,
            format,
            output,
        } => emit(&commands::export(&run_dir, format)?, output.as_ref()),
        Command::ValidateConfig {
            config,
            seed,
            evaluator,
        } => emit(
            &commands::validate_config(
                &config,
                &Overrides {
                    seed,
                    evaluator,
                    max_iter: None,
                },
            )?,
            None,
        ),
        Command::PrintGenome { file, repair } => emit(&commands::print_genome(&file, repair)?, None),
    }
}

fn main() {
    let cli = Cli::parse();
    let quiet = matches!(
        cli.command,
        Command::Run { quiet: true, .. } | Command::Resume { quiet: true, .. }
    );
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if quiet { "warn" } else { "info" }))
        .format_timestamp(None)
        .init();
    if let Err(e) = dispatch(cli) {
        eprintln!("{}", e.record());
        std::process::exit(e.exit_code());
    }
}
