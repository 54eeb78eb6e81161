//! `qksvm` command-line driver.
//!
//! Exit codes: 0 success, 1 verification or stage failure, 2 usage or
//! configuration error (including missing artifacts and hash mismatches).

mod config;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::PipelineConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("{}: produced by config {found}, current config is {expected} (use --force to accept)", path.display())]
    HashMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("stage `{stage}` failed: {message}")]
    StageFailure { stage: String, message: String },
    #[error("verification failed")]
    VerificationFailed,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::StageFailure { .. } | CliError::VerificationFailed => 1,
            _ => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "qksvm", version, about = "Quantum-kernel SVM pipeline")]
struct Cli {
    /// Cap on worker threads for every stage.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct PipelineArgs {
    /// Named preset applied before the config file (see `qksvm presets`).
    #[arg(long)]
    preset: Option<String>,
    /// TOML or JSON pipeline configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set kernel.n_qubits=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Artifact directory [default: config `output_dir`, $QKSVM_OUT_DIR, qksvm-out/<name>].
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Accept input artifacts produced under a different config hash.
    #[arg(long)]
    force: bool,
    /// Single-threaded, deterministic reports without timing columns.
    #[arg(long)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Select k-means prototypes per class from the dataset.
    Distill(PipelineArgs),
    /// Split, then fit standardization / PCA / angle scaling on the training side.
    Reduce(PipelineArgs),
    /// Compute train and test fidelity-kernel Gram matrices.
    Gram(PipelineArgs),
    /// Cross-validate on the train Gram and keep the best fold model.
    Train(PipelineArgs),
    /// Score the trained model on the held-out test Gram.
    Evaluate(PipelineArgs),
    /// Run every stage for the quantum and classical RBF arms and write reports.
    Benchmark(PipelineArgs),
    /// Check sv/tn agreement and Gram symmetry, unit diagonal and PSD on random inputs.
    Verify {
        #[arg(long, default_value_t = 4)]
        qubits: usize,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest tolerated |K_sv - K_tn|.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// List preset names.
    Presets,
    /// Print the resolved configuration as TOML.
    ShowConfig(PipelineArgs),
}

fn resolve(a: &PipelineArgs) -> Result<(PipelineConfig, PathBuf), CliError> {
    let cfg = config::load(a.preset.as_deref(), a.config.as_deref(), &a.overrides)?;
    let out = cfg.output_dir(a.out.as_deref());
    std::fs::create_dir_all(&out).map_err(|e| CliError::ConfigInvalid(format!("{}: {e}", out.display())))?;
    Ok((cfg, out))
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let Some(n) = threads else { return Ok(f()) };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build()
        .map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
    Ok(pool.install(f))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = cli.threads;
    match cli.command {
        Command::Presets => {
            for n in config::preset_names() {
                println!("{n}");
            }
            Ok(())
        }
        Command::ShowConfig(a) => {
            let cfg = config::load(a.preset.as_deref(), a.config.as_deref(), &a.overrides)?;
            print!("{}", toml::to_string(&cfg).map_err(|e| CliError::ConfigInvalid(e.to_string()))?);
            Ok(())
        }
        Command::Verify {
            qubits,
            trials,
            seed,
            tol,
        } => {
            if qubits == 0 || qubits > config::MAX_QUBITS {
                return Err(CliError::ConfigInvalid(format!("--qubits must be in 1..={}", config::MAX_QUBITS)));
            }
            let r = in_pool(threads, || stages::verify(qubits, trials, seed, tol))??;
            println!("{}", serde_json::to_string_pretty(&r).expect("serializable"));
            if r.passed {
                Ok(())
            } else {
                Err(CliError::VerificationFailed)
            }
        }
        Command::Distill(a) => with_pipeline(&a, threads, |cfg, out| stages::distill_stage(cfg, out)),
        Command::Reduce(a) => with_pipeline(&a, threads, |cfg, out| stages::reduce_stage(cfg, out, a.force)),
        Command::Gram(a) => with_pipeline(&a, threads, |cfg, out| stages::gram_stage(cfg, out, a.force, a.strict)),
        Command::Train(a) => with_pipeline(&a, threads, |cfg, out| stages::train_stage(cfg, out, a.force)),
        Command::Evaluate(a) => with_pipeline(&a, threads, |cfg, out| {
            let m = stages::evaluate_stage(cfg, out, a.force)?;
            println!(
                "accuracy {:.4}  precision {:.4}  f1 {:.4}  auc {}",
                m.accuracy,
                m.precision,
                m.f1,
                m.auc.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
            );
            Ok(())
        }),
        Command::Benchmark(a) => with_pipeline(&a, threads, |cfg, out| {
            let csv = stages::benchmark_stage(cfg, out, a.strict)?;
            print!("{csv}");
            log::info!("reports written to {}", out.display());
            Ok(())
        }),
    }
}

fn with_pipeline(
    a: &PipelineArgs,
    threads: Option<usize>,
    f: impl FnOnce(&PipelineConfig, &Path) -> Result<(), CliError> + Send,
) -> Result<(), CliError> {
    let (cfg, out) = resolve(a)?;
    let threads = if a.strict { Some(1) } else { threads };
    in_pool(threads, || f(&cfg, &out))?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
