use std::path::{Path, PathBuf};

use nlsql_core::catalog::{build_value_index, file_sha256, load_database, DatabaseCatalog, IngestConfig};
use nlsql_core::config::PipelineConfig;
use nlsql_core::exec::{ExecutionStatus, WRITE_FORBIDDEN};
use nlsql_core::generation::{run_pipeline, FinalStatus, PipelineDeps, PromptTexts, Provenance, Stage};
use nlsql_core::llm::ScriptedModel;
use nlsql_core::minhash::MinHashIndex;
use nlsql_core::retrieval::{DescriptionStore, EmbeddingCache, HashingEmbedder, LexicalReranker};
use nlsql_core::template::{PromptTemplate, UQU_TEMPLATE};
use nlsql_core::uqu::UserQuestion;

const UQU_REPLY: &str = r#"{"main_task": ["1. Count customers in Paris"],
 "sub_task": ["1.1 filter customers by city"],
 "object": ["customers", "city"],
 "implementation": [{"city": "Paris"}]}"#;

struct Fixture {
    _dir: tempfile::TempDir,
    db: PathBuf,
    catalog: DatabaseCatalog,
    index: MinHashIndex,
    store: DescriptionStore,
    embedder: HashingEmbedder,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("shop.sqlite");
    let conn = rusqlite::Connection::open(&db).unwrap();
    conn.execute_batch(
        "CREATE TABLE customers (id INTEGER PRIMARY KEY, name TEXT, city TEXT);
         INSERT INTO customers VALUES (1, 'Alice', 'Paris'), (2, 'Bob', 'Lyon'), (3, 'Chloe', 'Paris');",
    )
    .unwrap();
    drop(conn);
    let catalog = load_database(&db, &IngestConfig::default()).unwrap();
    let index = build_value_index(&catalog, 128, 0).unwrap();
    let embedder = HashingEmbedder::new(256);
    let store = DescriptionStore::build(&catalog, &embedder, &mut EmbeddingCache::default()).unwrap();
    Fixture { _dir: dir, db, catalog, index, store, embedder }
}

fn sql_reply(sql: &str) -> String {
    format!("```sql\n{sql}\n```")
}

fn run(
    f: &Fixture,
    generation: &ScriptedModel,
    revision: &ScriptedModel,
    config: &PipelineConfig,
) -> Result<nlsql_core::generation::PipelineRun, nlsql_core::generation::PipelineError> {
    let uqu = ScriptedModel::new([UQU_REPLY]);
    let template = PromptTemplate::new(UQU_TEMPLATE, &["question", "hint"]).unwrap();
    let texts = PromptTexts::default();
    let deps = PipelineDeps {
        catalog: &f.catalog,
        scorer: &f.index,
        descriptions: &f.store,
        embedder: &f.embedder,
        reranker: &LexicalReranker,
        uqu_model: &uqu,
        generation_model: generation,
        revision_model: revision,
        uqu_template: &template,
        prompt_texts: &texts,
    };
    let q = UserQuestion::new("How many customers live in Paris?", None, "shop").unwrap();
    run_pipeline(&q, &deps, config)
}

fn config(threshold: u32) -> PipelineConfig {
    PipelineConfig { revision_threshold: threshold, record_timings: false, ..Default::default() }
}

#[test]
fn always_failing_generator_yields_threshold_plus_one_steps() {
    let f = fixture();
    for threshold in 1..=5 {
        let bad = ScriptedModel::new([sql_reply("SELECT nope FROM missing")]);
        let revision = ScriptedModel::new([sql_reply("SELECT nope FROM missing")]);
        let out = run(&f, &bad, &revision, &config(threshold)).unwrap();
        assert_eq!(out.trace.len(), threshold as usize + 1, "threshold {threshold}");
        assert_eq!(out.trace.final_status, FinalStatus::Exhausted);
        assert_eq!(revision.calls(), threshold as usize);
        for (k, step) in out.trace.steps.iter().enumerate() {
            assert_eq!(step.candidate.iteration, k as u32);
            let want = if k == 0 { Provenance::Initial } else { Provenance::Revised };
            assert_eq!(step.candidate.provenance, want);
            assert!(matches!(step.outcome.status, ExecutionStatus::SqlError { .. }));
        }
        // Each revision prompt carries the verbatim engine error.
        let revision_calls: Vec<_> = out.calls.iter().filter(|c| c.stage == "revision").collect();
        assert_eq!(revision_calls.len(), threshold as usize);
        assert!(revision_calls.iter().all(|c| c.prompt.contains("no such table: missing")));
    }
}

#[test]
fn threshold_above_cap_is_rejected() {
    let f = fixture();
    let m = ScriptedModel::new([sql_reply("SELECT 1")]);
    assert!(config(6).validate().is_err());
    assert!(config(0).validate().is_err());
    let err = run(&f, &m, &m, &config(6)).unwrap_err();
    assert!(err.message.contains("revision_threshold"), "{err}");
}

#[test]
fn one_revision_then_success() {
    let f = fixture();
    let generation = ScriptedModel::new([sql_reply("SELECT count(*) FROM customer WHERE city = 'Paris'")]);
    let revision = ScriptedModel::new([sql_reply("SELECT count(*) FROM customers WHERE city = 'Paris'")]);
    let out = run(&f, &generation, &revision, &config(3)).unwrap();
    assert_eq!(out.trace.len(), 2);
    assert_eq!(out.trace.final_status, FinalStatus::Ok);
    assert_eq!(out.final_sql(), "SELECT count(*) FROM customers WHERE city = 'Paris'");
    assert_eq!(out.final_outcome.rows().unwrap().len(), 1);
}

#[test]
fn first_query_success_needs_no_revision() {
    let f = fixture();
    let generation = ScriptedModel::new([sql_reply("SELECT name FROM customers WHERE city = 'Paris'")]);
    let revision = ScriptedModel::new(Vec::<String>::new());
    let out = run(&f, &generation, &revision, &config(3)).unwrap();
    assert_eq!(out.trace.len(), 1);
    assert_eq!(revision.calls(), 0);
    // The retrieved value literal and column reach the prompt.
    assert!(out.prompt.schema_section.contains("customers.city"), "{}", out.prompt.schema_section);
    assert!(out.prompt.schema_section.contains("'Paris'"), "{}", out.prompt.schema_section);
}

fn digest(p: &Path) -> String {
    file_sha256(p).unwrap()
}

#[test]
fn writes_are_rejected_and_the_database_is_untouched() {
    let f = fixture();
    let before = digest(&f.db);
    let writer = ScriptedModel::new([sql_reply("DELETE FROM customers")]);
    let out = run(&f, &writer, &writer, &config(2)).unwrap();
    assert_eq!(out.trace.len(), 3);
    for step in &out.trace.steps {
        assert!(step.outcome.error_message().unwrap().contains(WRITE_FORBIDDEN));
    }
    assert_eq!(digest(&f.db), before);
}

#[test]
fn unparseable_understanding_stops_at_that_stage() {
    let f = fixture();
    let template = PromptTemplate::new(UQU_TEMPLATE, &["question", "hint"]).unwrap();
    let texts = PromptTexts::default();
    let junk = ScriptedModel::new(["no json here"]);
    let deps = PipelineDeps {
        catalog: &f.catalog,
        scorer: &f.index,
        descriptions: &f.store,
        embedder: &f.embedder,
        reranker: &LexicalReranker,
        uqu_model: &junk,
        generation_model: &junk,
        revision_model: &junk,
        uqu_template: &template,
        prompt_texts: &texts,
    };
    let q = UserQuestion::new("anything", None, "shop").unwrap();
    let err = run_pipeline(&q, &deps, &config(3)).unwrap_err();
    assert_eq!(err.stage, Stage::Understanding);
    // One re-ask, then give up.
    assert_eq!(err.calls.len(), 2);
}

#[test]
fn identical_inputs_give_identical_traces() {
    let f = fixture();
    let a = {
        let g = ScriptedModel::new([sql_reply("SELECT nope"), sql_reply("SELECT 1")]);
        serde_json::to_string(&run(&f, &g, &g, &config(3)).unwrap()).unwrap()
    };
    let b = {
        let g = ScriptedModel::new([sql_reply("SELECT nope"), sql_reply("SELECT 1")]);
        serde_json::to_string(&run(&f, &g, &g, &config(3)).unwrap()).unwrap()
    };
    assert_eq!(a, b);
}
