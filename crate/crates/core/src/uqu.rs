//! User-question understanding: task decomposition and keyword extraction.
//!
//! The model is asked for one JSON object with the keys `main_task`,
//! `sub_task`, `object` and `implementation`. Main tasks are numbered `1.`,
//! `2.`, ...; sub-tasks are numbered `<main>.<n>` and must point at an
//! existing main task. This module also reads and writes the annotated NLU
//! dataset format, which uses the same four keys plus `question`.

use std::collections::HashSet;
use std::path::Path;
use std::sync::OnceLock;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::llm::{ChatRequest, LanguageModel, LlmError};
use crate::template::PromptTemplate;
use crate::text::normalize_whitespace;

#[derive(Debug, Error)]
pub enum UquError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("no JSON object found in model output")]
    NoJson,
    #[error("invalid structure: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("model output could not be parsed after re-ask: {reason}")]
    Unparseable { reason: String, raw: Vec<String> },
    #[error("model call failed: {0}")]
    Model(#[from] LlmError),
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("unknown fine-tuning style {0:?} (expected \"alpaca\" or \"chat\")")]
    UnknownStyle(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserQuestion {
    pub question: String,
    pub hint: Option<String>,
    pub db_id: String,
}

impl UserQuestion {
    pub fn new(question: impl Into<String>, hint: Option<String>, db_id: impl Into<String>) -> Result<Self, UquError> {
        let question = question.into();
        if question.trim().is_empty() {
            return Err(UquError::EmptyQuestion);
        }
        Ok(Self { question, hint: hint.filter(|h| !h.trim().is_empty()), db_id: db_id.into() })
    }

    pub fn hint_text(&self) -> &str {
        self.hint.as_deref().unwrap_or("")
    }
}

fn main_number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\d+)\.(?:\s+|$)").unwrap())
}

fn sub_number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\d+)\.(\d+)\.?(?:\s+|$)").unwrap())
}

/// Leading `N.` of a main-task statement.
pub fn main_task_number(statement: &str) -> Option<u32> {
    main_number_re().captures(statement.trim()).and_then(|c| c[1].parse().ok())
}

/// Leading `N.M` of a sub-task statement.
pub fn sub_task_number(statement: &str) -> Option<(u32, u32)> {
    let c = sub_number_re().captures(statement.trim())?;
    Some((c[1].parse().ok()?, c[2].parse().ok()?))
}

/// Numbered main tasks and hierarchically numbered sub-tasks, each kept as
/// the full statement text (including its number).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDecomposition {
    pub main_tasks: Vec<String>,
    pub sub_tasks: Vec<String>,
}

impl TaskDecomposition {
    /// Normalize whitespace and number unnumbered main tasks when none of
    /// them carries a number, then check the numbering invariants.
    pub fn normalized(main_tasks: Vec<String>, sub_tasks: Vec<String>) -> Result<Self, Vec<String>> {
        let mut main_tasks: Vec<String> =
            main_tasks.iter().map(|s| normalize_whitespace(s)).filter(|s| !s.is_empty()).collect();
        if main_tasks.iter().all(|m| main_task_number(m).is_none()) {
            main_tasks = main_tasks.into_iter().enumerate().map(|(i, m)| format!("{}. {m}", i + 1)).collect();
        }
        let sub_tasks = sub_tasks.iter().map(|s| normalize_whitespace(s)).filter(|s| !s.is_empty()).collect();
        let d = Self { main_tasks, sub_tasks };
        d.validate()?;
        Ok(d)
    }

    /// Every violated numbering invariant, or `Ok` when there are none.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut violations = Vec::new();
        if self.main_tasks.is_empty() {
            violations.push("at least one main task is required".to_string());
        }
        let mut mains = Vec::new();
        for m in &self.main_tasks {
            match main_task_number(m) {
                Some(n) => {
                    if mains.last().is_some_and(|&prev| n <= prev) {
                        violations.push(format!("main task {m:?} is not numbered in increasing order"));
                    }
                    mains.push(n);
                }
                None => violations.push(format!("main task {m:?} has no number")),
            }
        }
        let mut prev: Option<(u32, u32)> = None;
        for s in &self.sub_tasks {
            match sub_task_number(s) {
                Some((major, minor)) => {
                    if !mains.contains(&major) {
                        violations.push(format!("sub-task \"{major}.{minor}\" references missing main task {major}"));
                    }
                    if prev.is_some_and(|p| (major, minor) <= p) {
                        violations.push(format!("sub-task \"{major}.{minor}\" is not numbered in increasing order"));
                    }
                    prev = Some((major, minor));
                }
                None => violations.push(format!("sub-task {s:?} has no hierarchical number")),
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }

    /// Sub-tasks sorted by their numbers.
    pub fn sorted_sub_tasks(&self) -> Vec<&str> {
        let mut subs: Vec<&str> = self.sub_tasks.iter().map(String::as_str).collect();
        subs.sort_by_key(|s| sub_task_number(s).unwrap_or((u32::MAX, u32::MAX)));
        subs
    }

    /// Main tasks then sub-tasks, one per line.
    pub fn as_text(&self) -> String {
        self.main_tasks.iter().chain(&self.sub_tasks).cloned().collect::<Vec<_>>().join("\n")
    }
}

/// Object keywords plus the implementation (condition → value) map.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub objects: Vec<String>,
    pub implementations: IndexMap<String, String>,
}

impl KeywordSet {
    /// Whitespace-normalize, drop empty objects and keys, and deduplicate
    /// objects case-insensitively keeping the first spelling.
    pub fn normalized<I, S>(objects: I, implementations: IndexMap<String, String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = HashSet::new();
        let objects = objects
            .into_iter()
            .map(|o| normalize_whitespace(o.as_ref()))
            .filter(|o| !o.is_empty() && seen.insert(o.to_lowercase()))
            .collect();
        let mut map = IndexMap::new();
        for (k, v) in implementations {
            let k = normalize_whitespace(&k);
            if !k.is_empty() && !map.contains_key(&k) {
                map.insert(k, normalize_whitespace(&v));
            }
        }
        Self { objects, implementations: map }
    }

    /// Keywords used for entity retrieval: objects, implementation keys and
    /// non-empty implementation values, deduplicated case-insensitively.
    pub fn retrieval_keywords(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.objects
            .iter()
            .cloned()
            .chain(self.implementations.iter().flat_map(|(k, v)| [k.clone(), v.clone()]))
            .filter(|k| !k.is_empty() && seen.insert(k.to_lowercase()))
            .collect()
    }
}

fn string_list(value: Option<&Value>, key: &str) -> Result<Vec<String>, String> {
    match value {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::String(s)) => Ok(vec![s.clone()]),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => Ok(s.clone()),
                Value::Number(n) => Ok(n.to_string()),
                other => Err(format!("{key} entries must be strings, found {other}")),
            })
            .collect(),
        Some(other) => Err(format!("{key} must be a list of strings, found {other}")),
    }
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(scalar_text).collect::<Vec<_>>().join(", "),
        other => other.to_string(),
    }
}

fn implementation_map(value: Option<&Value>) -> Result<IndexMap<String, String>, String> {
    let mut map = IndexMap::new();
    match value {
        None | Some(Value::Null) => {}
        Some(Value::Object(obj)) => {
            for (k, v) in obj {
                map.insert(k.clone(), scalar_text(v));
            }
        }
        Some(Value::Array(items)) => {
            for item in items {
                match item {
                    Value::Object(obj) => {
                        for (k, v) in obj {
                            map.insert(k.clone(), scalar_text(v));
                        }
                    }
                    Value::String(s) if s.trim().is_empty() => {}
                    other => return Err(format!("implementation entries must be objects, found {other}")),
                }
            }
        }
        Some(Value::String(s)) if s.trim().is_empty() => {}
        Some(other) => return Err(format!("implementation must be an object, found {other}")),
    }
    Ok(map)
}

fn field<'a>(obj: &'a Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| obj.get(*n))
}

const MAIN_KEYS: &[&str] = &["main_task", "main task", "main_tasks", "main tasks"];
const SUB_KEYS: &[&str] = &["sub_task", "sub task", "sub_tasks", "sub tasks"];
const OBJECT_KEYS: &[&str] = &["object", "objects"];
const IMPL_KEYS: &[&str] = &["implementation", "implementations"];

/// Build both structures from a JSON object holding the four keys.
fn structures_from_object(obj: &Map<String, Value>) -> Result<(TaskDecomposition, KeywordSet), Vec<String>> {
    let mut violations = Vec::new();
    let main = match field(obj, MAIN_KEYS) {
        None => {
            violations.push("missing key main_task".to_string());
            Vec::new()
        }
        Some(v) => string_list(Some(v), "main_task").unwrap_or_else(|e| {
            violations.push(e);
            Vec::new()
        }),
    };
    let sub = string_list(field(obj, SUB_KEYS), "sub_task").unwrap_or_else(|e| {
        violations.push(e);
        Vec::new()
    });
    let objects = match field(obj, OBJECT_KEYS) {
        None => {
            violations.push("missing key object".to_string());
            Vec::new()
        }
        Some(v) => string_list(Some(v), "object").unwrap_or_else(|e| {
            violations.push(e);
            Vec::new()
        }),
    };
    let implementations = implementation_map(field(obj, IMPL_KEYS)).unwrap_or_else(|e| {
        violations.push(e);
        IndexMap::new()
    });
    if !violations.is_empty() {
        return Err(violations);
    }
    let decomposition = TaskDecomposition::normalized(main, sub)?;
    Ok((decomposition, KeywordSet::normalized(objects, implementations)))
}

/// Position of the matching closing brace for the `{` at `start`, honoring
/// JSON string literals and escapes.
fn matching_brace(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// The first balanced `{...}` span in `raw` that parses as a JSON object.
/// Markdown fences and surrounding prose are ignored.
pub fn extract_first_json_object(raw: &str) -> Option<Map<String, Value>> {
    let bytes = raw.as_bytes();
    let mut from = 0;
    while let Some(offset) = raw[from..].find('{') {
        let start = from + offset;
        if let Some(end) = matching_brace(bytes, start) {
            if let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(&raw[start..=end]) {
                return Some(obj);
            }
        }
        from = start + 1;
    }
    None
}

/// Parse model output into validated structures.
pub fn parse_response(raw: &str) -> Result<(TaskDecomposition, KeywordSet), UquError> {
    let obj = extract_first_json_object(raw).ok_or(UquError::NoJson)?;
    structures_from_object(&obj).map_err(UquError::Validation)
}

/// Render both structures as the JSON object the model is asked to produce.
pub fn to_model_json(decomposition: &TaskDecomposition, keywords: &KeywordSet) -> String {
    json!({
        "main_task": decomposition.main_tasks,
        "sub_task": decomposition.sub_tasks,
        "object": keywords.objects,
        "implementation": keywords.implementations,
    })
    .to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UquOptions {
    pub model: String,
    pub temperature: f32,
    pub max_tokens: u32,
}

impl Default for UquOptions {
    fn default() -> Self {
        Self { model: "uqu".to_string(), temperature: 0.0, max_tokens: 1024 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Understanding {
    pub decomposition: TaskDecomposition,
    pub keywords: KeywordSet,
    /// Every raw model response, in call order.
    pub raw_responses: Vec<String>,
}

/// Render the question-understanding prompt. The hint is inserted verbatim.
pub fn render_uqu_prompt(question: &UserQuestion, template: &PromptTemplate) -> String {
    template.render(&[("question", question.question.as_str()), ("hint", question.hint_text())])
}

/// Ask the model for a decomposition and keywords, re-asking once at
/// temperature 0 when the first reply cannot be parsed.
pub fn understand(
    question: &UserQuestion,
    llm: &dyn LanguageModel,
    template: &PromptTemplate,
    options: &UquOptions,
) -> Result<Understanding, UquError> {
    let prompt = render_uqu_prompt(question, template);
    let request = ChatRequest::new(&options.model, prompt.clone())
        .with_temperature(options.temperature)
        .with_max_tokens(options.max_tokens);
    let first = llm.complete(&request)?;
    let mut raw_responses = vec![first.text.clone()];
    let reason = match parse_response(&first.text) {
        Ok((decomposition, keywords)) => return Ok(Understanding { decomposition, keywords, raw_responses }),
        Err(e) => e.to_string(),
    };

    let reask = ChatRequest::new(
        &options.model,
        format!(
            "{prompt}\n\nYour previous reply could not be used ({reason}).\nPrevious reply:\n{}\n\n\
             Reply again with only a single JSON object with the keys \
             main_task, sub_task, object and implementation.",
            first.text
        ),
    )
    .with_temperature(0.0)
    .with_max_tokens(options.max_tokens);
    let second = llm.complete(&reask)?;
    raw_responses.push(second.text.clone());
    match parse_response(&second.text) {
        Ok((decomposition, keywords)) => Ok(Understanding { decomposition, keywords, raw_responses }),
        Err(e) => Err(UquError::Unparseable { reason: e.to_string(), raw: raw_responses }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" | "training" => Ok(Split::Train),
            "validation" | "valid" | "val" | "dev" => Ok(Split::Validation),
            "test" | "testing" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NluRecord {
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub db_id: Option<String>,
    pub decomposition: TaskDecomposition,
    pub keywords: KeywordSet,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NluLoad {
    pub records: Vec<NluRecord>,
    pub errors: Vec<RecordError>,
    pub counts: SplitCounts,
}

impl NluLoad {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &NluRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// Boundaries of the 70/20/10 positional split for `n` records.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (n as f64 * 0.7).round() as usize;
    let validation = ((n as f64 * 0.2).round() as usize).min(n - train);
    (train, validation, n - train - validation)
}

/// Parse annotated NLU records from JSON text (a list of records, or an
/// object holding the list under `records` or `data`). Records without an
/// explicit `split` are assigned 70/20/10 by position among the valid ones.
pub fn parse_nlu_records(text: &str) -> Result<NluLoad, UquError> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| UquError::Read { path: "<input>".into(), message: e.to_string() })?;
    let items = match &root {
        Value::Array(items) => items.clone(),
        Value::Object(obj) => match field(obj, &["records", "data"]) {
            Some(Value::Array(items)) => items.clone(),
            _ => return Err(UquError::Read { path: "<input>".into(), message: "expected a list of records".into() }),
        },
        _ => return Err(UquError::Read { path: "<input>".into(), message: "expected a list of records".into() }),
    };

    let mut parsed: Vec<(NluRecord, bool)> = Vec::new();
    let mut errors = Vec::new();
    for (index, item) in items.iter().enumerate() {
        match parse_one_record(item) {
            Ok(pair) => parsed.push(pair),
            Err(message) => {
                log::warn!("record {index} skipped: {message}");
                errors.push(RecordError { index, message });
            }
        }
    }
    let (train, validation, _) = split_sizes(parsed.len());
    let mut counts = SplitCounts::default();
    let records = parsed
        .into_iter()
        .enumerate()
        .map(|(i, (mut record, explicit))| {
            if !explicit {
                record.split = if i < train {
                    Split::Train
                } else if i < train + validation {
                    Split::Validation
                } else {
                    Split::Test
                };
            }
            match record.split {
                Split::Train => counts.train += 1,
                Split::Validation => counts.validation += 1,
                Split::Test => counts.test += 1,
            }
            record
        })
        .collect();
    Ok(NluLoad { records, errors, counts })
}

fn parse_one_record(item: &Value) -> Result<(NluRecord, bool), String> {
    let obj = item.as_object().ok_or("record is not an object")?;
    let question = match obj.get("question") {
        Some(Value::String(q)) if !q.trim().is_empty() => q.clone(),
        _ => return Err("missing required field question".into()),
    };
    for (keys, name) in [(MAIN_KEYS, "main task"), (OBJECT_KEYS, "object")] {
        if field(obj, keys).is_none() {
            return Err(format!("missing required field {name}"));
        }
    }
    let (decomposition, keywords) = structures_from_object(obj).map_err(|v| v.join("; "))?;
    let (split, explicit) = match obj.get("split") {
        Some(Value::String(s)) => (s.parse::<Split>()?, true),
        _ => (Split::Train, false),
    };
    let text_field =
        |names: &[&str]| field(obj, names).and_then(Value::as_str).filter(|s| !s.trim().is_empty()).map(str::to_string);
    Ok((
        NluRecord {
            question,
            hint: text_field(&["evidence", "hint"]),
            db_id: text_field(&["db_id"]),
            decomposition,
            keywords,
            split,
        },
        explicit,
    ))
}

pub fn load_nlu_records(path: &Path) -> Result<NluLoad, UquError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UquError::Read { path: path.display().to_string(), message: e.to_string() })?;
    parse_nlu_records(&text).map_err(|e| match e {
        UquError::Read { message, .. } => UquError::Read { path: path.display().to_string(), message },
        other => other,
    })
}

const DECOMPOSE_INSTRUCTION: &str = "Decompose the database question into numbered main tasks \
and hierarchically numbered sub-tasks. Reply with a JSON object with keys main_task and sub_task.";
const EXTRACT_INSTRUCTION: &str = "Extract keywords from the database question: objects that \
correspond to table or column names, and implementations mapping each filtering condition to \
its value. Reply with a JSON object with keys object and implementation.";

fn question_input(record: &NluRecord) -> String {
    match &record.hint {
        Some(h) => format!("Question: {}\nHint: {h}", record.question),
        None => format!("Question: {}", record.question),
    }
}

/// Serialize fine-tuning items as JSON lines, two per record (decomposition
/// then extraction). `style` is `alpaca` (instruction/input/output) or
/// `chat` (system/user/assistant messages).
pub fn export_finetune(records: &[NluRecord], style: &str) -> Result<String, UquError> {
    let style = style.trim().to_ascii_lowercase();
    if style != "alpaca" && style != "chat" {
        return Err(UquError::UnknownStyle(style));
    }
    let mut out = String::new();
    for record in records {
        let input = question_input(record);
        let targets = [
            (
                DECOMPOSE_INSTRUCTION,
                json!({
                    "main_task": record.decomposition.main_tasks,
                    "sub_task": record.decomposition.sub_tasks,
                }),
            ),
            (
                EXTRACT_INSTRUCTION,
                json!({
                    "object": record.keywords.objects,
                    "implementation": record.keywords.implementations,
                }),
            ),
        ];
        for (instruction, target) in targets {
            let item = if style == "alpaca" {
                json!({
                    "instruction": instruction,
                    "input": input,
                    "output": target.to_string(),
                })
            } else {
                json!({
                    "messages": [
                        {"role": "system", "content": instruction},
                        {"role": "user", "content": input},
                        {"role": "assistant", "content": target.to_string()},
                    ]
                })
            };
            out.push_str(&item.to_string());
            out.push('\n');
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedModel;
    use crate::template::UQU_TEMPLATE;

    fn template() -> PromptTemplate {
        PromptTemplate::new(UQU_TEMPLATE, &["question", "hint"]).unwrap()
    }

    #[test]
    fn parses_well_formed_json() {
        let raw = r#"{"main_task": ["1. Is SuperSport Park located at Centurion?"],
            "sub_task": ["1.1 find the location of SuperSport Park", "1.2 check if the location is at Centurion"],
            "object": ["location", "SuperSport Park"], "implementation": {}}"#;
        let (d, k) = parse_response(raw).unwrap();
        assert_eq!(d.main_tasks.len(), 1);
        assert_eq!(
            d.sub_tasks,
            vec!["1.1 find the location of SuperSport Park", "1.2 check if the location is at Centurion"]
        );
        assert_eq!(k.objects, vec!["location", "SuperSport Park"]);
    }

    #[test]
    fn strips_fences_and_prose() {
        let raw = "Sure! Here it is:\n```json\n{\"main_task\": [\"1. List the tax code\"], \
                   \"sub_task\": [], \"object\": [\"tax code\", \"business\"], \
                   \"implementation\": {\"named\": \"Rue Lepic\"}}\n```\nHope that helps {not json}";
        let (d, k) = parse_response(raw).unwrap();
        assert_eq!(d.main_tasks, vec!["1. List the tax code"]);
        assert_eq!(k.implementations.get("named").map(String::as_str), Some("Rue Lepic"));
    }

    #[test]
    fn dangling_sub_task_is_named_in_error() {
        let raw = r#"{"main_task": ["1. a"], "sub_task": ["1.1 b", "2.1 c"], "object": ["x"], "implementation": {}}"#;
        match parse_response(raw) {
            Err(UquError::Validation(v)) => assert!(v.iter().any(|m| m.contains("\"2.1\"")), "{v:?}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn no_json_is_reported() {
        assert!(matches!(parse_response("no braces here"), Err(UquError::NoJson)));
    }

    #[test]
    fn non_increasing_numbering_rejected() {
        let d = TaskDecomposition {
            main_tasks: vec!["2. a".into(), "1. b".into()],
            sub_tasks: vec!["1.2 x".into(), "1.1 y".into()],
        };
        let v = d.validate().unwrap_err();
        assert_eq!(v.len(), 2, "{v:?}");
    }

    #[test]
    fn unnumbered_main_tasks_are_numbered() {
        let d =
            TaskDecomposition::normalized(vec!["Identify the nation".into(), "State the  full name".into()], vec![])
                .unwrap();
        assert_eq!(d.main_tasks, vec!["1. Identify the nation", "2. State the full name"]);
    }

    #[test]
    fn objects_dedup_case_insensitively() {
        let k = KeywordSet::normalized(["Tax code", "tax  code", "business", " "], IndexMap::new());
        assert_eq!(k.objects, vec!["Tax code", "business"]);
    }

    #[test]
    fn round_trip_through_model_json() {
        let d = TaskDecomposition {
            main_tasks: vec!["1. Find the rental price per day of the most expensive children's film".into()],
            sub_tasks: vec!["1.1 find children's films".into()],
        };
        let mut imp = IndexMap::new();
        imp.insert("category".to_string(), "children".to_string());
        let k = KeywordSet { objects: vec!["rental price".into(), "film".into()], implementations: imp };
        assert_eq!(parse_response(&to_model_json(&d, &k)).unwrap(), (d, k));
    }

    #[test]
    fn understand_reasks_once() {
        let q = UserQuestion::new("Is SuperSport Park located at Centurion?", None, "db").unwrap();
        let good = r#"{"main_task": ["1. Is SuperSport Park located at Centurion?"], "sub_task": [], "object": ["location"], "implementation": {}}"#;
        let model = ScriptedModel::new(["garbage", good]);
        let u = understand(&q, &model, &template(), &UquOptions::default()).unwrap();
        assert_eq!(u.raw_responses.len(), 2);
        assert_eq!(model.calls(), 2);

        let bad = ScriptedModel::new(["garbage"]);
        match understand(&q, &bad, &template(), &UquOptions::default()) {
            Err(UquError::Unparseable { raw, .. }) => assert_eq!(raw, vec!["garbage", "garbage"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hint_is_inserted_verbatim() {
        let q = UserQuestion::new(
            "Which schools are charter?",
            Some("Charter schools refers to `Charter School (Y/N)` = 1".into()),
            "db",
        )
        .unwrap();
        let p = render_uqu_prompt(&q, &template());
        assert!(p.contains("Hint: Charter schools refers to `Charter School (Y/N)` = 1"));
        assert!(p.contains("Question: Which schools are charter?"));
    }

    #[test]
    fn empty_question_rejected() {
        assert!(matches!(UserQuestion::new("  ", None, "db"), Err(UquError::EmptyQuestion)));
    }

    fn record_json(i: usize) -> Value {
        json!({
            "question": format!("question {i}"),
            "main task": [format!("1. task {i}")],
            "sub task": ["1.1 step"],
            "object": ["thing"],
            "implementation": {"equals": "x"},
        })
    }

    #[test]
    fn loads_records_and_assigns_splits() {
        let items: Vec<Value> = (0..20).map(record_json).collect();
        let load = parse_nlu_records(&Value::Array(items).to_string()).unwrap();
        assert_eq!(load.records.len(), 20);
        assert_eq!(load.counts, SplitCounts { train: 14, validation: 4, test: 2 });
    }

    #[test]
    fn missing_object_skips_record_at_its_index() {
        let mut items: Vec<Value> = (0..3).map(record_json).collect();
        items[1].as_object_mut().unwrap().remove("object");
        let load = parse_nlu_records(&Value::Array(items).to_string()).unwrap();
        assert_eq!(load.records.len(), 2);
        assert_eq!(load.errors.len(), 1);
        assert_eq!(load.errors[0].index, 1);
        assert!(load.errors[0].message.contains("object"));
    }

    #[test]
    fn empty_list_is_zero_records() {
        let load = parse_nlu_records("[]").unwrap();
        assert!(load.records.is_empty() && load.errors.is_empty());
    }

    #[test]
    fn split_sizes_for_full_dataset() {
        assert_eq!(split_sizes(1500), (1050, 300, 150));
        assert_eq!(split_sizes(0), (0, 0, 0));
        assert_eq!(split_sizes(1), (1, 0, 0));
    }

    #[test]
    fn export_emits_two_items_per_record() {
        let mut items: Vec<Value> = (0..2).map(record_json).collect();
        items[0]["implementation"] = json!({});
        let load = parse_nlu_records(&Value::Array(items).to_string()).unwrap();
        for style in ["alpaca", "chat"] {
            let out = export_finetune(&load.records, style).unwrap();
            let lines: Vec<&str> = out.lines().collect();
            assert_eq!(lines.len(), 4);
            assert_eq!(out, export_finetune(&load.records, style).unwrap());
        }
        let out = export_finetune(&load.records, "alpaca").unwrap();
        let second: Value = serde_json::from_str(out.lines().nth(1).unwrap()).unwrap();
        let target: Value = serde_json::from_str(second["output"].as_str().unwrap()).unwrap();
        assert_eq!(target["implementation"], json!({}));
        assert!(matches!(export_finetune(&load.records, "sharegpt"), Err(UquError::UnknownStyle(_))));
    }
}
