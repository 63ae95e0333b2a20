//! `onmanifold`: generate planted corpora, train classifier ensembles, explain
//! documents, check the gradient theory and analyze embeddings.
//!
//! Exit status: 0 on success, 1 on invalid input or configuration, 2 when a
//! `verify-theorem` check fails.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use commands::Outputs;
use config::Assignment;

/// Environment variable naming the parent of default run directories.
const RUN_DIR_ENV: &str = "ONMANIFOLD_RUN_DIR";

#[derive(Parser)]
#[command(name = "onmanifold", version, about = "On-manifold gradient explanations for text classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, short = 'c', value_name = "FILE")]
    config: Option<PathBuf>,
    /// Set one configuration key; applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory [default: $ONMANIFOLD_RUN_DIR/<command>, else runs/<command>].
    #[arg(long, value_name = "DIR")]
    run_dir: Option<PathBuf>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-keyword corpus (CSV plus ground-truth sidecar).
    GenData {
        #[command(flatten)]
        common: Common,
        /// Number of documents.
        #[arg(long)]
        docs: Option<usize>,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the classifier and its surrogate ensemble on a CSV corpus.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "CSV")]
        corpus: Option<String>,
        #[arg(long)]
        surrogates: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Explain every document of a CSV corpus with a trained bundle.
    Explain {
        #[command(flatten)]
        common: Common,
        /// Model bundle directory.
        #[arg(long, value_name = "DIR")]
        model: Option<String>,
        #[arg(long, value_name = "CSV")]
        input: Option<String>,
        /// Norm threshold; suggested from the input when absent.
        #[arg(long, short = 't')]
        threshold: Option<f64>,
        #[arg(short = 'k', long = "top-k")]
        k: Option<usize>,
        /// both, ours or max_norm.
        #[arg(long)]
        method: Option<String>,
        /// Ground-truth sidecar for precision@k.
        #[arg(long, value_name = "JSON")]
        truth: Option<String>,
    },
    /// Monte Carlo and property checks of the off-manifold gradient theory.
    VerifyTheorem {
        #[command(flatten)]
        common: Common,
        /// Comma-separated: theorem, corollary, norm_tail, offmanifold, gradcheck.
        #[arg(long)]
        experiments: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        ambient_dim: Option<usize>,
        #[arg(long)]
        codim: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Embedding variance profile and gradient-norm histogram.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        model: Option<String>,
        #[arg(long, value_name = "CSV")]
        input: Option<String>,
        #[arg(long)]
        cutoff: Option<f64>,
    },
}

fn flag<T: ToString>(key: &str, value: &Option<T>) -> Option<Assignment> {
    value.as_ref().map(|v| Assignment {
        key: key.to_string(),
        value: v.to_string(),
        origin: format!("--{}", key.rsplit('.').next().unwrap_or(key).replace('_', "-")),
    })
}

/// Defaults, then the file, then `--set`, then the typed flags.
fn assemble(common: &Common, flags: Vec<Option<Assignment>>) -> Result<Vec<Assignment>> {
    let mut all = match &common.config {
        Some(path) => config::read_assignments(path)?,
        None => Vec::new(),
    };
    for s in &common.set {
        all.push(config::parse_set_flag(s)?);
    }
    all.extend(flags.into_iter().flatten());
    Ok(all)
}

fn run_dir(common: &Common, command: &str) -> PathBuf {
    if let Some(dir) = &common.run_dir {
        return dir.clone();
    }
    match std::env::var_os(RUN_DIR_ENV) {
        Some(root) if !root.is_empty() => Path::new(&root).join(command),
        _ => Path::new("runs").join(command),
    }
}

fn unix_seconds(t: SystemTime) -> f64 {
    t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

#[derive(Serialize)]
struct Metadata<'a> {
    command: &'a str,
    version: &'a str,
    started_unix: f64,
    finished_unix: f64,
    elapsed_seconds: f64,
    threads: usize,
    passed: bool,
    summary: &'a [String],
}

enum Outcome {
    Done,
    AssertionFailed,
}

fn execute<C, F>(name: &str, common: &Common, flags: Vec<Option<Assignment>>, body: F) -> Result<Outcome>
where
    C: Serialize + DeserializeOwned + Default,
    F: FnOnce(&C) -> Result<Outputs>,
{
    let cfg: C = config::resolve(&assemble(common, flags)?)?;
    let resolved = config::render(&cfg)?;
    if common.print_config {
        print!("{resolved}");
        return Ok(Outcome::Done);
    }
    if let Some(n) = common.threads {
        if n == 0 {
            anyhow::bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring --threads")?;
    }
    let dir = run_dir(common, name);
    let started = SystemTime::now();
    let clock = Instant::now();
    let outputs = body(&cfg)?;
    std::fs::create_dir_all(&dir).with_context(|| format!("creating run directory {}", dir.display()))?;
    let write = |file: &str, text: &str| -> Result<()> {
        let path = dir.join(file);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    };
    write("resolved_config.txt", &resolved)?;
    write("resolved_config.json", &(serde_json::to_string_pretty(&cfg)? + "\n"))?;
    let metadata = Metadata {
        command: name,
        version: env!("CARGO_PKG_VERSION"),
        started_unix: unix_seconds(started),
        finished_unix: unix_seconds(SystemTime::now()),
        elapsed_seconds: clock.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
        passed: outputs.passed,
        summary: &outputs.summary,
    };
    write("metadata.json", &(serde_json::to_string_pretty(&metadata)? + "\n"))?;
    for line in &outputs.summary {
        println!("{line}");
    }
    let passed = outputs.passed;
    outputs.write(&dir)?;
    println!("outputs in {}", dir.display());
    Ok(if passed { Outcome::Done } else { Outcome::AssertionFailed })
}

fn dispatch(cli: Cli) -> Result<Outcome> {
    match &cli.command {
        Command::GenData {
            common,
            docs,
            vocab_size,
            seed,
        } => execute(
            "gen-data",
            common,
            vec![
                flag("corpus.doc_count", docs),
                flag("corpus.vocab_size", vocab_size),
                flag("corpus.seed", seed),
            ],
            commands::gen_data,
        ),
        Command::Train {
            common,
            corpus,
            surrogates,
            epochs,
            seed,
        } => execute(
            "train",
            common,
            vec![
                flag("corpus", corpus),
                flag("pipeline.surrogates", surrogates),
                flag("pipeline.train.epochs", epochs),
                flag("pipeline.seed", seed),
            ],
            commands::train,
        ),
        Command::Explain {
            common,
            model,
            input,
            threshold,
            k,
            method,
            truth,
        } => execute(
            "explain",
            common,
            vec![
                flag("model", model),
                flag("input", input),
                flag("threshold", threshold),
                flag("k", k),
                flag("method", method),
                flag("truth", truth),
            ],
            commands::explain,
        ),
        Command::VerifyTheorem {
            common,
            experiments,
            trials,
            ambient_dim,
            codim,
            width,
            seed,
        } => execute(
            "verify-theorem",
            common,
            vec![
                flag("experiments", experiments),
                flag("theorem.trials", trials),
                flag("theorem.ambient_dim", ambient_dim),
                flag("theorem.codim", codim),
                flag("theorem.width", width),
                flag("theorem.base_seed", seed),
            ],
            commands::verify,
        ),
        Command::Analyze {
            common,
            model,
            input,
            cutoff,
        } => execute(
            "analyze",
            common,
            vec![flag("model", model), flag("input", input), flag("cutoff", cutoff)],
            commands::analyze,
        ),
    }
}

/// The error and its causes, skipping causes already quoted by their parent.
fn error_message(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::AssertionFailed) => {
            eprintln!("error: verification failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {}", error_message(&e));
            ExitCode::from(1)
        }
    }
}
