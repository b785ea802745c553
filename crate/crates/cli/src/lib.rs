//! Command-line application around `nlsql-core`: configuration, benchmark
//! adapters, model clients, caching and the `index`, `ask`, `eval` and
//! `bench-nlu` commands.

pub mod bench;
pub mod cache;
pub mod clients;
pub mod commands;
pub mod config;
pub mod runtime;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use nlsql_core::config::ScorerKind;

use crate::config::{load_config, AppConfig};

#[derive(Debug, Parser)]
#[command(name = "nlsql", version, about = "Keyword-driven text-to-SQL pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory with one sub-directory (or SQLite file) per database.
    #[arg(long, global = true)]
    pub db_root: Option<PathBuf>,
    /// First-stage retrieval scorer.
    #[arg(long, global = true)]
    pub scorer: Option<ScorerKind>,
    /// Maximum number of revisions (1 to 5).
    #[arg(long, global = true)]
    pub revision_threshold: Option<u32>,
    /// Transcript file; replaces every model client with a scripted mock.
    #[arg(long, global = true)]
    pub mock: Option<PathBuf>,
    /// Seed for the MinHash permutations.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Show what would happen without calling any service.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Cache directory for catalogs, embeddings and model responses.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Worker threads for evaluation (0 = one per CPU).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest and index every database under the database root.
    Index {
        /// Output directory for catalog artifacts.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer one question against one database.
    Ask {
        question: String,
        #[arg(long)]
        db_id: String,
        #[arg(long)]
        hint: Option<String>,
        /// Where to write the trace JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run the pipeline over a BIRD or Spider benchmark and report EX.
    Eval {
        /// Question file, or a directory containing `<split>.json`.
        benchmark: PathBuf,
        #[arg(long, default_value = "dev")]
        split: String,
        #[arg(long, default_value = "eval-out")]
        out: PathBuf,
        /// Evaluate only the first N items.
        #[arg(long)]
        limit: Option<usize>,
        /// Compare result sets as sets instead of multisets.
        #[arg(long)]
        set_compare: bool,
        /// JSON file of manually assigned error categories per item index.
        #[arg(long)]
        tags: Option<PathBuf>,
    },
    /// Score question understanding against an annotated record file.
    BenchNlu {
        records: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "nlu-out")]
        out: PathBuf,
        /// Skip the judge score.
        #[arg(long)]
        no_judge: bool,
    },
    /// Export annotated records as fine-tuning JSON lines.
    ExportFinetune {
        records: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        /// `alpaca` (instruction/input/output) or `chat` (messages).
        #[arg(long, default_value = "chat")]
        style: String,
        #[arg(long, default_value = "finetune.jsonl")]
        out: PathBuf,
    },
}

/// Load the configuration file and apply command-line overrides.
pub fn resolve_config(common: &CommonArgs) -> Result<AppConfig> {
    let mut app = load_config(common.config.as_deref())?;
    if let Some(r) = &common.db_root {
        app.db_root = Some(r.clone());
    }
    let p = &mut app.pipeline;
    if let Some(s) = common.scorer {
        p.scorer = s;
    }
    if let Some(t) = common.revision_threshold {
        p.revision_threshold = t;
    }
    if let Some(s) = common.seed {
        p.seed = s;
    }
    if let Some(c) = &common.cache_dir {
        p.cache_dir = c.clone();
    }
    if let Some(w) = common.workers {
        p.workers = w;
    }
    if common.mock.is_some() {
        p.record_timings = false;
    }
    p.validate()?;
    Ok(app)
}

pub fn db_root(app: &AppConfig) -> Result<PathBuf> {
    app.db_root.clone().context("no database root given (use --db-root or set db_root in the config file)")
}

/// Run the parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let app = resolve_config(&cli.common)?;
    match cli.command {
        Command::Index { out } => commands::index::run(&app, &cli.common, out),
        Command::Ask { question, db_id, hint, trace } => {
            commands::ask::run(&app, &cli.common, &question, &db_id, hint, trace)
        }
        Command::Eval { benchmark, split, out, limit, set_compare, tags } => commands::eval::run(
            &app,
            &cli.common,
            &commands::eval::EvalArgs { benchmark, split, out, limit, set_compare, tags },
        ),
        Command::BenchNlu { records, split, out, no_judge } => {
            commands::bench_nlu::run(&app, &cli.common, &records, &split, &out, !no_judge)
        }
        Command::ExportFinetune { records, split, style, out } => {
            commands::export::run(&cli.common, &records, &split, &style, &out)
        }
    }
}
