//! SQL generation: prompt assembly, SQL extraction, execution and the
//! bounded revision loop.

use std::collections::{BTreeMap, HashSet};
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{ColumnKind, ColumnSchema, DatabaseCatalog};
use crate::config::{PipelineConfig, REVISION_HARD_CAP};
use crate::exec::{execute_sql, ExecutionOutcome, ExecutionStatus};
use crate::llm::{ChatRequest, Embedder, LanguageModel, LlmCall, LlmError, RecordingModel, Reranker, TokenUsage};
use crate::retrieval::{
    DescriptionStore, EntityRetriever, EntityScorer, KeywordHits, RetrievalError, RetrievalLimits, RetrievedEntities,
};
use crate::template::{PromptTemplate, CONSTRAINTS_V1, GENERATION_SYSTEM, INCENTIVES_V1, REVISION_TEMPLATE};
use crate::uqu::{understand, TaskDecomposition, Understanding, UquError, UquOptions, UserQuestion};

/// Examples shown per column when no value was retrieved for it.
const FALLBACK_EXAMPLES: usize = 3;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("entity {0} is not in the catalog")]
    EntityMismatch(String),
    #[error("no SQL statement found in the model reply: {raw:?}")]
    NoSql { raw: Vec<String> },
    #[error("revision refused: iteration {iteration} has reached the cap of {cap}")]
    RevisionCapExceeded { iteration: u32, cap: u32 },
    #[error(transparent)]
    Model(#[from] LlmError),
}

/// The four prompt sections plus the system instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationPrompt {
    pub system: String,
    pub schema_section: String,
    pub reasoning_section: String,
    pub constraints_section: String,
    pub incentives_section: String,
}

impl GenerationPrompt {
    /// User message sent to the model.
    pub fn render(&self) -> String {
        format!(
            "### Data schema\n{}\n\n### Question reasoning\n{}\n\n### Constraints\n{}\n\n### Incentives\n{}\n",
            self.schema_section.trim_end(),
            self.reasoning_section.trim_end(),
            self.constraints_section.trim_end(),
            self.incentives_section.trim_end()
        )
    }
}

/// Constraint and incentive texts; defaults are the shipped templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTexts {
    pub system: String,
    pub constraints: String,
    pub incentives: String,
}

impl Default for PromptTexts {
    fn default() -> Self {
        Self {
            system: GENERATION_SYSTEM.trim_end().to_string(),
            constraints: CONSTRAINTS_V1.trim_end().to_string(),
            incentives: INCENTIVES_V1.trim_end().to_string(),
        }
    }
}

fn is_plain_identifier(name: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Za-z_][A-Za-z0-9_]*$").expect("valid regex")).is_match(name)
}

/// `name` or `"name"` when it needs quoting.
pub fn sql_identifier(name: &str) -> String {
    if is_plain_identifier(name) {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

fn sql_literal(value: &str, kind: ColumnKind) -> String {
    if kind == ColumnKind::Numeric && crate::text::is_purely_numeric(value) {
        value.to_string()
    } else {
        format!("'{}'", value.replace('\'', "''"))
    }
}

fn type_label(column: &ColumnSchema) -> String {
    if column.declared_type.trim().is_empty() {
        match column.kind {
            ColumnKind::Text => "TEXT".into(),
            ColumnKind::Numeric => "NUMERIC".into(),
            ColumnKind::Other => "ANY".into(),
        }
    } else {
        column.declared_type.to_uppercase()
    }
}

fn column_line(table: &str, column: &ColumnSchema, examples: &[String], description: Option<String>) -> String {
    let mut line = format!("- {}.{} ({})", sql_identifier(table), sql_identifier(&column.name), type_label(column));
    if let Some(d) = description.filter(|d| !d.is_empty()) {
        line.push_str(&format!(": {d}"));
    }
    if !examples.is_empty() {
        let lits: Vec<String> = examples.iter().map(|v| sql_literal(v, column.kind)).collect();
        line.push_str(&format!("; examples: {}", lits.join(", ")));
    }
    line
}

fn render_schema(entities: &RetrievedEntities, catalog: &DatabaseCatalog) -> Result<String, GenerationError> {
    entities.check_against(catalog).map_err(|e| match e {
        RetrievalError::Dangling(s) => GenerationError::EntityMismatch(s),
        other => GenerationError::EntityMismatch(other.to_string()),
    })?;

    let tables_line =
        format!("Tables: {}", catalog.tables.iter().map(|t| sql_identifier(&t.name)).collect::<Vec<_>>().join(", "));

    if entities.is_empty() {
        let mut out = vec![
            "Note: no entities were retrieved for this question; the full schema is listed.".to_string(),
            tables_line,
        ];
        for t in &catalog.tables {
            out.push(format!("Table {}", sql_identifier(&t.name)));
            for c in &t.columns {
                let examples: Vec<String> = c.sample_values.iter().take(FALLBACK_EXAMPLES).cloned().collect();
                out.push(column_line(&t.name, c, &examples, None));
            }
        }
        return Ok(out.join("\n"));
    }

    // Columns mentioned by any entity kind, in catalog order.
    let mut wanted: HashSet<(&str, &str)> = HashSet::new();
    for c in &entities.columns {
        wanted.insert((&c.table, &c.column));
    }
    for v in &entities.values {
        wanted.insert((&v.table, &v.column));
    }
    for d in &entities.descriptions {
        wanted.insert((&d.table, &d.column));
    }
    let mut examples: BTreeMap<(&str, &str), Vec<String>> = BTreeMap::new();
    for v in &entities.values {
        let list = examples.entry((&v.table, &v.column)).or_default();
        if !list.contains(&v.value) {
            list.push(v.value.clone());
        }
    }

    let mut out = vec![tables_line];
    for t in &catalog.tables {
        let cols: Vec<&ColumnSchema> =
            t.columns.iter().filter(|c| wanted.contains(&(t.name.as_str(), c.name.as_str()))).collect();
        if cols.is_empty() {
            continue;
        }
        out.push(format!("Table {}", sql_identifier(&t.name)));
        for c in cols {
            let key = (t.name.as_str(), c.name.as_str());
            let ex = examples.get(&key).cloned().unwrap_or_default();
            let desc = entities.descriptions.iter().find(|d| d.table == t.name && d.column == c.name).map(|d| d.text());
            out.push(column_line(&t.name, c, &ex, desc));
        }
    }
    Ok(out.join("\n"))
}

fn render_reasoning(question: &UserQuestion, decomposition: &TaskDecomposition) -> String {
    let mut out = vec![format!("Question: {}", question.question)];
    if !question.hint_text().is_empty() {
        out.push(format!("Hint: {}", question.hint_text()));
    }
    out.push("Main tasks:".into());
    out.extend(decomposition.main_tasks.iter().cloned());
    let subs = decomposition.sorted_sub_tasks();
    if !subs.is_empty() {
        out.push("Sub-tasks:".into());
        out.extend(subs.into_iter().map(str::to_string));
    }
    out.join("\n")
}

pub fn build_prompt(
    question: &UserQuestion,
    decomposition: &TaskDecomposition,
    entities: &RetrievedEntities,
    catalog: &DatabaseCatalog,
) -> Result<GenerationPrompt, GenerationError> {
    build_prompt_with(question, decomposition, entities, catalog, &PromptTexts::default())
}

pub fn build_prompt_with(
    question: &UserQuestion,
    decomposition: &TaskDecomposition,
    entities: &RetrievedEntities,
    catalog: &DatabaseCatalog,
    texts: &PromptTexts,
) -> Result<GenerationPrompt, GenerationError> {
    Ok(GenerationPrompt {
        system: texts.system.clone(),
        schema_section: render_schema(entities, catalog)?,
        reasoning_section: render_reasoning(question, decomposition),
        constraints_section: texts.constraints.clone(),
        incentives_section: texts.incentives.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Initial,
    Revised,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlCandidate {
    pub sql: String,
    pub iteration: u32,
    pub provenance: Provenance,
}

/// Cut `sql` after its first complete statement. Returns the statement and
/// whether anything followed it.
pub fn first_statement(sql: &str) -> (String, bool) {
    let bytes = sql.as_bytes();
    let mut i = 0;
    let mut end = sql.len();
    while i < bytes.len() {
        match bytes[i] {
            q @ (b'\'' | b'"' | b'`') => {
                i += 1;
                while i < bytes.len() {
                    if bytes[i] == q {
                        if bytes.get(i + 1) == Some(&q) {
                            i += 1;
                        } else {
                            break;
                        }
                    }
                    i += 1;
                }
            }
            b'[' => {
                while i < bytes.len() && bytes[i] != b']' {
                    i += 1;
                }
            }
            b'-' if bytes.get(i + 1) == Some(&b'-') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                i += 2;
                while i + 1 < bytes.len() && !(bytes[i] == b'*' && bytes[i + 1] == b'/') {
                    i += 1;
                }
                i += 1;
            }
            b';' => {
                end = i;
                break;
            }
            _ => {}
        }
        i += 1;
    }
    let end = end.min(sql.len());
    let rest = sql.get(end + 1..).unwrap_or("");
    let has_more = rest.lines().map(|l| l.split("--").next().unwrap_or("").trim()).any(|l| !l.is_empty());
    (sql[..end].trim().to_string(), has_more)
}

/// Extract one SQL statement from a model reply: the first fenced block that
/// contains a query, then any non-empty block tagged `sql` (so a data-modifying
/// statement reaches the executor and is rejected there), otherwise the text
/// from the first `SELECT`/`WITH` up to the first blank line. Only the first
/// statement is kept.
pub fn extract_sql(reply: &str) -> Option<String> {
    static FENCE: OnceLock<Regex> = OnceLock::new();
    static START: OnceLock<Regex> = OnceLock::new();
    let fence =
        FENCE.get_or_init(|| Regex::new(r"(?s)```[ \t]*([A-Za-z0-9_-]*)[ \t]*\r?\n(.*?)```").expect("valid regex"));
    let start = START.get_or_init(|| {
        Regex::new(r#"(?i)\b(select\b|with\s+(recursive\s+)?[\w"`\[\]]+\s*(\([^)]*\)\s*)?as\s*\()"#)
            .expect("valid regex")
    });

    let blocks: Vec<(String, String)> = fence
        .captures_iter(reply)
        .map(|c| {
            let tag = c.get(1).map_or("", |m| m.as_str()).to_ascii_lowercase();
            (tag, c.get(2).map_or("", |m| m.as_str()).to_string())
        })
        .collect();
    let body = blocks
        .iter()
        .find(|(_, b)| start.is_match(b))
        .map(|(_, b)| {
            let offset = start.find(b).map_or(0, |m| m.start());
            b[offset..].to_string()
        })
        .or_else(|| blocks.iter().find(|(tag, b)| tag == "sql" && !b.trim().is_empty()).map(|(_, b)| b.clone()))
        .or_else(|| {
            let m = start.find(reply)?;
            let tail = &reply[m.start()..];
            let cut = tail.find("\n\n").or_else(|| tail.find("\r\n\r\n")).unwrap_or(tail.len());
            Some(tail[..cut].to_string())
        })?;
    let (stmt, more) = first_statement(&body);
    if more {
        log::warn!("model reply contains several statements; keeping the first");
    }
    (!stmt.is_empty()).then_some(stmt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOptions {
    pub model: String,
    pub temperature: f32,
    pub max_tokens: u32,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self { model: "generation".into(), temperature: 0.0, max_tokens: 1024 }
    }
}

const REASK: &str = "Your previous reply did not contain a SQL query. \
Reply with a single SQLite query inside a ```sql code block.";

fn ask_for_sql(
    llm: &dyn LanguageModel,
    system: &str,
    user: String,
    options: &GenerationOptions,
) -> Result<String, GenerationError> {
    let request = ChatRequest::new(&options.model, user.clone())
        .with_system(system)
        .with_temperature(options.temperature)
        .with_max_tokens(options.max_tokens);
    let first = llm.complete(&request)?;
    if let Some(sql) = extract_sql(&first.text) {
        return Ok(sql);
    }
    let reask = ChatRequest::new(&options.model, format!("{user}\n\n{REASK}"))
        .with_system(system)
        .with_temperature(0.0)
        .with_max_tokens(options.max_tokens);
    let second = llm.complete(&reask)?;
    extract_sql(&second.text).ok_or(GenerationError::NoSql { raw: vec![first.text, second.text] })
}

pub fn generate_sql(
    llm: &dyn LanguageModel,
    prompt: &GenerationPrompt,
    options: &GenerationOptions,
) -> Result<SqlCandidate, GenerationError> {
    let sql = ask_for_sql(llm, &prompt.system, prompt.render(), options)?;
    Ok(SqlCandidate { sql, iteration: 0, provenance: Provenance::Initial })
}

/// The revision prompt: schema and reasoning sections, the failed SQL and
/// the engine error, verbatim.
pub fn render_revision_prompt(failed: &SqlCandidate, outcome: &ExecutionOutcome, ctx: &GenerationPrompt) -> String {
    let template = PromptTemplate::new(REVISION_TEMPLATE, &[]).expect("no required placeholders");
    let feedback = outcome.feedback();
    template.render(&[
        ("schema", ctx.schema_section.as_str()),
        ("reasoning", ctx.reasoning_section.as_str()),
        ("sql", failed.sql.as_str()),
        ("error", feedback.as_str()),
    ])
}

/// Ask for a corrected query. Refused once `failed.iteration` reaches `cap`
/// (itself limited to the hard cap).
pub fn revise(
    llm: &dyn LanguageModel,
    failed: &SqlCandidate,
    outcome: &ExecutionOutcome,
    ctx: &GenerationPrompt,
    cap: u32,
    options: &GenerationOptions,
) -> Result<SqlCandidate, GenerationError> {
    let cap = cap.min(REVISION_HARD_CAP);
    if failed.iteration >= cap {
        return Err(GenerationError::RevisionCapExceeded { iteration: failed.iteration, cap });
    }
    let sql = ask_for_sql(llm, &ctx.system, render_revision_prompt(failed, outcome, ctx), options)?;
    Ok(SqlCandidate { sql, iteration: failed.iteration + 1, provenance: Provenance::Revised })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisionStep {
    pub candidate: SqlCandidate,
    pub outcome: ExecutionOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalStatus {
    Ok,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisionTrace {
    pub steps: Vec<RevisionStep>,
    pub final_status: FinalStatus,
}

impl RevisionTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last(&self) -> Option<&RevisionStep> {
        self.steps.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Understanding,
    Retrieval,
    Prompt,
    Generation,
    Revision,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Understanding => "understanding",
            Stage::Retrieval => "retrieval",
            Stage::Prompt => "prompt",
            Stage::Generation => "generation",
            Stage::Revision => "revision",
        })
    }
}

#[derive(Debug, Error)]
#[error("[{stage}] {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
    /// Model calls made before the failure.
    pub calls: Vec<LlmCall>,
}

/// Handles the pipeline needs for one database.
pub struct PipelineDeps<'a> {
    pub catalog: &'a DatabaseCatalog,
    pub scorer: &'a dyn EntityScorer,
    pub descriptions: &'a DescriptionStore,
    pub embedder: &'a dyn Embedder,
    pub reranker: &'a dyn Reranker,
    pub uqu_model: &'a dyn LanguageModel,
    pub generation_model: &'a dyn LanguageModel,
    pub revision_model: &'a dyn LanguageModel,
    pub uqu_template: &'a PromptTemplate,
    pub prompt_texts: &'a PromptTexts,
}

/// Everything one pipeline run produced; serialized as the trace document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub question: UserQuestion,
    pub understanding: Understanding,
    pub keyword_hits: Vec<KeywordHits>,
    pub entities: RetrievedEntities,
    pub prompt: GenerationPrompt,
    pub trace: RevisionTrace,
    pub final_outcome: ExecutionOutcome,
    pub calls: Vec<LlmCall>,
    pub usage: TokenUsage,
}

impl PipelineRun {
    pub fn final_sql(&self) -> &str {
        self.trace.last().map_or("", |s| s.candidate.sql.as_str())
    }
}

fn needs_revision(outcome: &ExecutionOutcome, empty_budget: &mut u32) -> bool {
    match &outcome.status {
        ExecutionStatus::SqlError { .. } | ExecutionStatus::Timeout => true,
        ExecutionStatus::Ok { rows } if rows.is_empty() && *empty_budget > 0 => {
            *empty_budget -= 1;
            true
        }
        ExecutionStatus::Ok { .. } => false,
    }
}

/// Understand → retrieve → generate → execute, revising failed queries up
/// to `config.revision_threshold` times.
pub fn run_pipeline(
    question: &UserQuestion,
    deps: &PipelineDeps<'_>,
    config: &PipelineConfig,
) -> Result<PipelineRun, PipelineError> {
    let log: Mutex<Vec<LlmCall>> = Mutex::new(Vec::new());
    let fail = |stage: Stage, message: String, log: &Mutex<Vec<LlmCall>>| PipelineError {
        stage,
        message,
        calls: log.lock().map(|l| l.clone()).unwrap_or_default(),
    };
    config.validate().map_err(|e| fail(Stage::Generation, e.to_string(), &log))?;
    fn recorder<'a>(
        inner: &'a dyn LanguageModel,
        stage: &str,
        log: &'a Mutex<Vec<LlmCall>>,
        timings: bool,
    ) -> RecordingModel<'a, dyn LanguageModel + 'a> {
        let m = RecordingModel::new(inner, stage, log);
        if timings {
            m
        } else {
            m.without_latency()
        }
    }
    let record = |inner, stage| recorder(inner, stage, &log, config.record_timings);
    let timing = |o: ExecutionOutcome| if config.record_timings { o } else { o.without_timing() };

    let uqu_options =
        UquOptions { model: config.uqu.model.clone(), temperature: config.temperature, max_tokens: config.max_tokens };
    let understanding = understand(question, &record(deps.uqu_model, "uqu"), deps.uqu_template, &uqu_options)
        .map_err(|e: UquError| fail(Stage::Understanding, e.to_string(), &log))?;

    let retriever = EntityRetriever {
        catalog: deps.catalog,
        scorer: deps.scorer,
        reranker: deps.reranker,
        embedder: deps.embedder,
        descriptions: deps.descriptions,
        limits: RetrievalLimits { top_k_first: config.top_k_first, top_k_final: config.top_k_final },
    };
    let (entities, keyword_hits) = retriever
        .retrieve(&understanding.keywords.retrieval_keywords())
        .map_err(|e| fail(Stage::Retrieval, e.to_string(), &log))?;

    let prompt = build_prompt_with(question, &understanding.decomposition, &entities, deps.catalog, deps.prompt_texts)
        .map_err(|e| fail(Stage::Prompt, e.to_string(), &log))?;

    let gen_options = GenerationOptions {
        model: config.generation.model.clone(),
        temperature: config.temperature,
        max_tokens: config.max_tokens,
    };
    let rev_options = GenerationOptions { model: config.revision.model.clone(), ..gen_options.clone() };
    let db_path = &deps.catalog.db_path;
    let mut candidate = generate_sql(&record(deps.generation_model, "generation"), &prompt, &gen_options)
        .map_err(|e| fail(Stage::Generation, e.to_string(), &log))?;
    let mut outcome = timing(execute_sql(db_path, &candidate.sql, config.sql_timeout_secs));
    let mut steps = vec![RevisionStep { candidate: candidate.clone(), outcome: outcome.clone() }];
    let mut empty_budget = u32::from(config.revise_on_empty);
    let reviser = record(deps.revision_model, "revision");
    while candidate.iteration < config.revision_threshold && needs_revision(&outcome, &mut empty_budget) {
        candidate = revise(&reviser, &candidate, &outcome, &prompt, config.revision_threshold, &rev_options)
            .map_err(|e| fail(Stage::Revision, e.to_string(), &log))?;
        outcome = timing(execute_sql(db_path, &candidate.sql, config.sql_timeout_secs));
        steps.push(RevisionStep { candidate: candidate.clone(), outcome: outcome.clone() });
    }
    drop(reviser);

    let final_status = if outcome.is_ok() { FinalStatus::Ok } else { FinalStatus::Exhausted };
    let calls = log.into_inner().unwrap_or_else(|p| p.into_inner());
    let mut usage = TokenUsage::default();
    for c in &calls {
        usage += c.usage;
    }
    Ok(PipelineRun {
        question: question.clone(),
        understanding,
        keyword_hits,
        entities,
        prompt,
        trace: RevisionTrace { steps, final_status },
        final_outcome: outcome,
        calls,
        usage,
    })
}
