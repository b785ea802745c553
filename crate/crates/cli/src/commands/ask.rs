use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use nlsql_core::exec::ExecutionStatus;
use nlsql_core::generation::{build_prompt_with, run_pipeline, FinalStatus, PipelineDeps, PromptTexts};
use nlsql_core::retrieval::{EmbeddingCache, HashingEmbedder, RetrievedEntities};
use nlsql_core::uqu::{render_uqu_prompt, TaskDecomposition, UserQuestion};
use sha2::{Digest, Sha256};

use super::{calls_cost, uqu_template, write_file};
use crate::bench::{available_db_ids, resolve_db};
use crate::config::AppConfig;
use crate::runtime::{embedding_cache_path, Clients, LoadedDatabase};
use crate::{db_root, CommonArgs};

const MAX_PRINTED_ROWS: usize = 20;

fn locate(app: &AppConfig, db_id: &str) -> Result<PathBuf> {
    let root = db_root(app)?;
    if let Some(p) = resolve_db(&root, db_id) {
        return Ok(if root.join(db_id).is_dir() { root.join(db_id) } else { p });
    }
    let ids = available_db_ids(&root);
    bail!(
        "unknown database {db_id:?}; available: {}",
        if ids.is_empty() { "(none)".to_string() } else { ids.join(", ") }
    )
}

fn default_trace_path(app: &AppConfig, question: &UserQuestion) -> PathBuf {
    let digest = Sha256::digest(format!("{}\0{}\0{}", question.db_id, question.question, question.hint_text()));
    app.pipeline.cache_dir.join("traces").join(format!("{}.json", &hex::encode(digest)[..16]))
}

pub fn run(
    app: &AppConfig,
    common: &CommonArgs,
    question: &str,
    db_id: &str,
    hint: Option<String>,
    trace: Option<PathBuf>,
) -> Result<i32> {
    let db_path = locate(app, db_id)?;
    let question = UserQuestion::new(question, hint, db_id)?;
    let config = &app.pipeline;

    if common.dry_run {
        // Offline only: catalog from disk, no model or embedding service.
        let embedder = HashingEmbedder::new(256);
        let mut cache = EmbeddingCache::default();
        let db = LoadedDatabase::open(&db_path, db_id, config, &embedder, &mut cache)?;
        println!("=== question-understanding prompt ===");
        println!("{}", render_uqu_prompt(&question, &uqu_template()));
        let preview = build_prompt_with(
            &question,
            &TaskDecomposition::default(),
            &RetrievedEntities::default(),
            &db.artifact.catalog,
            &PromptTexts::default(),
        )?;
        println!("=== generation prompt preview (before retrieval) ===");
        println!("{}", preview.render());
        return Ok(0);
    }

    let clients = Clients::build(config, common.mock.as_deref())?;
    let cache_path = embedding_cache_path(config);
    let mut embeddings = EmbeddingCache::load(&cache_path).unwrap_or_default();
    let db = LoadedDatabase::open(&db_path, db_id, config, clients.embedder.as_ref(), &mut embeddings)?;
    if let Err(e) = embeddings.save(&cache_path) {
        log::warn!("cannot save embedding cache: {e}");
    }
    let template = uqu_template();
    let texts = PromptTexts::default();
    let deps = PipelineDeps {
        catalog: &db.artifact.catalog,
        scorer: db.scorer(),
        descriptions: &db.descriptions,
        embedder: clients.embedder.as_ref(),
        reranker: clients.reranker.as_ref(),
        uqu_model: clients.uqu.as_ref(),
        generation_model: clients.generation.as_ref(),
        revision_model: clients.revision.as_ref(),
        uqu_template: &template,
        prompt_texts: &texts,
    };
    let run = run_pipeline(&question, &deps, config).map_err(|e| anyhow!("{e}"))?;

    let trace_path = trace.unwrap_or_else(|| default_trace_path(app, &question));
    write_file(&trace_path, &(serde_json::to_string_pretty(&run).context("cannot serialize trace")? + "\n"))?;

    println!("SQL: {}", run.final_sql());
    match &run.final_outcome.status {
        ExecutionStatus::Ok { rows } => {
            println!("Rows: {}", rows.len());
            for row in rows.iter().take(MAX_PRINTED_ROWS) {
                let cells: Vec<String> = row.iter().map(ToString::to_string).collect();
                println!("  {}", cells.join("\t"));
            }
            if rows.len() > MAX_PRINTED_ROWS {
                println!("  ... {} more", rows.len() - MAX_PRINTED_ROWS);
            }
        }
        ExecutionStatus::SqlError { message } => println!("Error: {message}"),
        ExecutionStatus::Timeout => println!("Error: query timed out"),
    }
    println!("Revisions: {}", run.trace.len().saturating_sub(1));
    let latency: f64 = run.calls.iter().map(|c| c.latency_secs).sum();
    if config.record_timings {
        println!("Time: {:.3}s model, {:.3}s execution", latency, run.final_outcome.elapsed_secs);
    } else {
        println!("Time: not recorded");
    }
    let cost = calls_cost(config, &run.calls).map_or_else(|| "unknown".to_string(), |c| format!("${c:.6}"));
    println!("Tokens: {} prompt, {} completion; cost {cost}", run.usage.prompt_tokens, run.usage.completion_tokens);
    println!("Trace: {}", trace_path.display());
    Ok(match run.trace.final_status {
        FinalStatus::Ok => 0,
        FinalStatus::Exhausted => 3,
    })
}
