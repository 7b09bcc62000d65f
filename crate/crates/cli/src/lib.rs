//! The `slotshot` command line. Every stage reads and writes JSON Lines
//! files so stages can be re-run independently.
//!
//! Exit codes: 0 success, 1 usage error, 2 input data violates its
//! contract, 3 scorer or service failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

mod commands;
pub mod mock;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Scorer(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Scorer(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "slotshot", version, about = "Slot filling as reading comprehension")]
pub struct Cli {
    /// Seed for every random choice; required by stages that sample.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: log::LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitKindArg {
    Entities,
    Templates,
    Relations,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Align facts to document sentences and group them into instances.
    Build {
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        entities: PathBuf,
        #[arg(long)]
        facts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Cross verified templates with instances of their relation.
    Querify {
        #[arg(long)]
        templates: PathBuf,
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        entities: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pair questions with sentences of other relations of the same entity.
    Negatives {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        templates: PathBuf,
        #[arg(long)]
        entities: PathBuf,
        /// Positives per negative.
        #[arg(long, default_value_t = 1.0)]
        ratio: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write zero-shot train/dev/test folds.
    Split {
        #[arg(long, value_enum)]
        kind: SplitKindArg,
        #[arg(long, default_value_t = 1)]
        folds: usize,
        /// Example files (positives and negatives); repeatable.
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        /// Template file, required for `--kind templates`.
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        dev: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        /// Positives per template as TRAIN,DEV,TEST.
        #[arg(long)]
        per_template: Option<String>,
        /// Relation counts as TRAIN,DEV,TEST.
        #[arg(long)]
        relation_partition: Option<String>,
        /// Positives per negative in every split.
        #[arg(long, default_value_t = 1.0)]
        ratio: f64,
    },
    /// Score and decode every example.
    Predict {
        /// random-ne, lexical, or external:<host:port | exec:program args>
        #[arg(long)]
        scorer: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Null logit; defaults to the scorer's own bias, else 0.
        #[arg(long, allow_hyphen_values = true)]
        bias: Option<f64>,
        #[arg(long)]
        p_min: Option<f64>,
        #[arg(long, default_value_t = slotshot_core::engine::DEFAULT_MAX_SPAN_LEN)]
        max_span_len: usize,
        /// Ask K sampled templates per instance and combine the answers.
        #[arg(long)]
        ensemble: Option<usize>,
        #[arg(long, default_value_t = 30_000)]
        timeout_ms: u64,
    },
    /// Judge predictions against gold examples.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Precision/recall as the confidence threshold rises.
    Curve {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated thresholds; default: every observed probability.
        #[arg(long)]
        thresholds: Option<String>,
    },
    /// Run the annotation service.
    Serve {
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        relations: PathBuf,
        #[arg(long)]
        entities: PathBuf,
        #[arg(long)]
        instances: PathBuf,
        #[arg(long, default_value_t = slotshot_annotation::rules::DEFAULT_TRIALS)]
        trials: usize,
        #[arg(long, default_value_t = 100)]
        snapshot_every: u64,
    },
    /// Write a synthetic corpus (relations, entities, docs, facts, templates).
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        relations: usize,
        #[arg(long, default_value_t = 500)]
        entities: usize,
    },
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .try_init();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be positive");
            return 1;
        }
        pool = pool.num_threads(j);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match pool.install(|| commands::dispatch(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
