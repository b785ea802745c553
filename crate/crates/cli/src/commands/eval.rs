use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use nlsql_core::config::PipelineConfig;
use nlsql_core::evaluation::{
    aggregate, judge_outcomes, CompareMode, ErrorCategory, ExVerdict, ItemRecord, ItemStatus,
};
use nlsql_core::exec::execute_sql;
use nlsql_core::generation::{run_pipeline, PipelineDeps, PromptTexts};
use nlsql_core::retrieval::EmbeddingCache;
use nlsql_core::uqu::UserQuestion;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{calls_cost, uqu_template, usage_of, write_file};
use crate::bench::{load_benchmark, resolve_db, BenchmarkItem};
use crate::config::AppConfig;
use crate::runtime::{embedding_cache_path, Clients, LoadedDatabase};
use crate::{db_root, CommonArgs};

pub struct EvalArgs {
    pub benchmark: PathBuf,
    pub split: String,
    pub out: PathBuf,
    pub limit: Option<usize>,
    pub set_compare: bool,
    pub tags: Option<PathBuf>,
}

/// Manually assigned error categories: a JSON object from item index to a
/// list of category names, e.g. `{"3": ["incorrect-column"]}`.
pub fn load_tags(path: &Path, items: usize) -> Result<BTreeMap<usize, Vec<ErrorCategory>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let tags: BTreeMap<usize, Vec<ErrorCategory>> =
        serde_json::from_str(&text).with_context(|| format!("invalid tag file {}", path.display()))?;
    if let Some(i) = tags.keys().find(|i| **i >= items) {
        bail!("tag file {} names item {i}, but the run has {items} items", path.display());
    }
    Ok(tags)
}

/// Per-item result saved under `<out>/items/` so an interrupted run can
/// resume. Reused only when the fingerprint matches.
#[derive(Debug, Serialize, Deserialize)]
struct CachedItem {
    fingerprint: String,
    record: ItemRecord,
}

/// Run bookkeeping kept out of the report so reports stay reproducible.
#[derive(Debug, Serialize)]
struct RunMeta {
    benchmark: String,
    split: String,
    items: usize,
    items_from_cache: usize,
    items_executed: usize,
    workers: usize,
    mocked: bool,
    wall_time_secs: f64,
}

struct Shared<'a> {
    config: &'a PipelineConfig,
    clients: &'a Clients,
    databases: &'a BTreeMap<String, LoadedDatabase>,
    out: &'a Path,
    mode: CompareMode,
    run_fingerprint: String,
}

fn run_fingerprint(config: &PipelineConfig, mock: Option<&Path>, mode: CompareMode) -> Result<String> {
    // Settings that cannot change results are left out.
    let mut c = config.clone();
    c.cache_dir = PathBuf::new();
    c.workers = 0;
    c.record_timings = true;
    let mock_digest = match mock {
        Some(p) => hex::encode(Sha256::digest(std::fs::read(p)?)),
        None => String::new(),
    };
    let text = serde_json::to_string(&(c, mock_digest, format!("{mode:?}")))?;
    Ok(hex::encode(Sha256::digest(text)))
}

fn item_fingerprint(shared: &Shared<'_>, item: &BenchmarkItem, db: &LoadedDatabase) -> String {
    let text =
        serde_json::to_string(&(&shared.run_fingerprint, item, &db.artifact.key.db_sha256)).expect("item serializes");
    hex::encode(Sha256::digest(text))
}

fn load_cached(path: &Path, fingerprint: &str) -> Option<ItemRecord> {
    let bytes = std::fs::read(path).ok()?;
    let cached: CachedItem = serde_json::from_slice(&bytes).ok()?;
    (cached.fingerprint == fingerprint).then_some(cached.record)
}

fn evaluate_item(shared: &Shared<'_>, index: usize, item: &BenchmarkItem) -> Result<(ItemRecord, bool)> {
    let db = &shared.databases[&item.db_id];
    let fingerprint = item_fingerprint(shared, item, db);
    let item_path = shared.out.join("items").join(format!("{index}.json"));
    if let Some(record) = load_cached(&item_path, &fingerprint) {
        return Ok((record, true));
    }
    let config = shared.config;
    let mut record = ItemRecord {
        index,
        db_id: item.db_id.clone(),
        question: item.question.clone(),
        gold_sql: item.gold_sql.clone(),
        pred_sql: String::new(),
        status: ItemStatus::InvalidGold,
        ex: None,
        revisions: 0,
        error: None,
        usage: Default::default(),
        cost_usd: Some(0.0),
        model_latency_secs: 0.0,
        tags: Vec::new(),
    };
    let db_file = &db.artifact.catalog.db_path;
    let gold = execute_sql(db_file, &item.gold_sql, config.sql_timeout_secs);
    let trace_path = shared.out.join("traces").join(format!("{index}.json"));

    if let Some(message) = gold.error_message() {
        // Excluded from EX; the pipeline is not run.
        record.error = Some(format!("gold query failed: {message}"));
    } else {
        let question = UserQuestion::new(&item.question, Some(item.hint.clone()), &item.db_id)?;
        let template = uqu_template();
        let texts = PromptTexts::default();
        let deps = PipelineDeps {
            catalog: &db.artifact.catalog,
            scorer: db.scorer(),
            descriptions: &db.descriptions,
            embedder: shared.clients.embedder.as_ref(),
            reranker: shared.clients.reranker.as_ref(),
            uqu_model: shared.clients.uqu.as_ref(),
            generation_model: shared.clients.generation.as_ref(),
            revision_model: shared.clients.revision.as_ref(),
            uqu_template: &template,
            prompt_texts: &texts,
        };
        let (calls, trace_json) = match run_pipeline(&question, &deps, config) {
            Ok(run) => {
                record.pred_sql = run.final_sql().to_string();
                record.revisions = run.trace.len().saturating_sub(1) as u32;
                match judge_outcomes(&run.final_outcome, &gold, &item.gold_sql, shared.mode) {
                    ExVerdict::Match => {
                        record.status = ItemStatus::Match;
                        record.ex = Some(true);
                    }
                    ExVerdict::Mismatch => {
                        record.status = ItemStatus::Mismatch;
                        record.ex = Some(false);
                    }
                    ExVerdict::PredFailed { message } => {
                        record.status = ItemStatus::PredFailed;
                        record.ex = Some(false);
                        record.error = Some(message);
                    }
                    ExVerdict::InvalidGold { message } => {
                        record.error = Some(format!("gold query failed: {message}"));
                    }
                }
                let json = serde_json::to_string_pretty(&run)?;
                (run.calls, json)
            }
            Err(e) => {
                record.status = ItemStatus::PipelineError;
                record.ex = Some(false);
                record.error = Some(e.to_string());
                let json = serde_json::to_string_pretty(&serde_json::json!({
                    "question": question,
                    "error": { "stage": e.stage.to_string(), "message": e.message },
                    "calls": e.calls,
                }))?;
                (e.calls, json)
            }
        };
        record.usage = usage_of(&calls);
        record.cost_usd = calls_cost(config, &calls);
        record.model_latency_secs = calls.iter().map(|c| c.latency_secs).sum();
        write_file(&trace_path, &(trace_json + "\n"))?;
    }

    let cached = CachedItem { fingerprint, record };
    write_file(&item_path, &(serde_json::to_string_pretty(&cached)? + "\n"))?;
    Ok((cached.record, false))
}

pub fn run(app: &AppConfig, common: &CommonArgs, args: &EvalArgs) -> Result<i32> {
    let started = Instant::now();
    let config = &app.pipeline;
    let (_, mut items) = load_benchmark(&args.benchmark, &args.split)?;
    if let Some(n) = args.limit {
        items.truncate(n);
    }
    let tags = args.tags.as_deref().map(|p| load_tags(p, items.len())).transpose()?;
    let root = db_root(app)?;

    let mut db_paths: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut missing = Vec::new();
    for item in &items {
        if db_paths.contains_key(&item.db_id) || missing.contains(&item.db_id) {
            continue;
        }
        match resolve_db(&root, &item.db_id) {
            Some(p) => {
                let p = if root.join(&item.db_id).is_dir() { root.join(&item.db_id) } else { p };
                db_paths.insert(item.db_id.clone(), p);
            }
            None => missing.push(item.db_id.clone()),
        }
    }
    if !missing.is_empty() {
        bail!("databases not found under {}: {}", root.display(), missing.join(", "));
    }
    if common.dry_run {
        println!("{} items over {} databases; no model calls made", items.len(), db_paths.len());
        for (id, p) in &db_paths {
            println!("  {id}: {}", p.display());
        }
        return Ok(0);
    }

    let clients = Clients::build(config, common.mock.as_deref())?;
    let cache_path = embedding_cache_path(config);
    let mut embeddings = EmbeddingCache::load(&cache_path).unwrap_or_default();
    let mut databases = BTreeMap::new();
    for (id, path) in &db_paths {
        let db = LoadedDatabase::open(path, id, config, clients.embedder.as_ref(), &mut embeddings)?;
        databases.insert(id.clone(), db);
    }
    if let Err(e) = embeddings.save(&cache_path) {
        log::warn!("cannot save embedding cache: {e}");
    }

    let mode = if args.set_compare { CompareMode::Set } else { CompareMode::Multiset };
    let shared = Shared {
        config,
        clients: &clients,
        databases: &databases,
        out: &args.out,
        mode,
        run_fingerprint: run_fingerprint(config, common.mock.as_deref(), mode)?,
    };
    std::fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(config.workers).build().context("cannot start worker pool")?;
    let results: Vec<(ItemRecord, bool)> = pool.install(|| {
        items.par_iter().enumerate().map(|(i, item)| evaluate_item(&shared, i, item)).collect::<Result<_>>()
    })?;

    let from_cache = results.iter().filter(|(_, c)| *c).count();
    let records: Vec<ItemRecord> = results.into_iter().map(|(r, _)| r).collect();
    let mut report = aggregate(&records, tags.as_ref());
    if mode == CompareMode::Set {
        report.metadata.insert("ex_comparison".into(), "set".into());
    }
    write_file(&args.out.join("report.json"), &report.to_json())?;
    write_file(&args.out.join("report.txt"), &report.to_text_table())?;
    write_file(&args.out.join("items.csv"), &report.items_csv()?)?;
    let meta = RunMeta {
        benchmark: args.benchmark.display().to_string(),
        split: args.split.clone(),
        items: records.len(),
        items_from_cache: from_cache,
        items_executed: records.len() - from_cache,
        workers: pool.current_num_threads(),
        mocked: clients.mocked,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    write_file(&args.out.join("run_meta.json"), &(serde_json::to_string_pretty(&meta)? + "\n"))?;
    print!("{}", report.to_text_table());
    println!("Report: {}", args.out.join("report.json").display());
    Ok(0)
}
