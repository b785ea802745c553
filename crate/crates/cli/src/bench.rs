//! Benchmark adapters: BIRD and Spider question files, database lookup.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nlsql_core::catalog::resolve_database_file;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkFormat {
    Bird,
    Spider,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub question: String,
    /// BIRD `evidence`; empty for Spider.
    pub hint: String,
    pub db_id: String,
    pub gold_sql: String,
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Option<&'a str> {
    obj.get(key).and_then(Value::as_str)
}

/// Parse a question file. Records with `SQL` are read as BIRD, records with
/// `query` as Spider.
pub fn parse_benchmark(text: &str) -> Result<(BenchmarkFormat, Vec<BenchmarkItem>)> {
    let value: Value = serde_json::from_str(text).context("benchmark file is not valid JSON")?;
    let records = value.as_array().ok_or_else(|| anyhow!("benchmark file must hold a JSON array"))?;
    let mut format = None;
    let mut items = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let obj = r.as_object().ok_or_else(|| anyhow!("record {i} is not an object"))?;
        let (this, gold) = if let Some(sql) = field(obj, "SQL") {
            (BenchmarkFormat::Bird, sql)
        } else if let Some(sql) = field(obj, "query") {
            (BenchmarkFormat::Spider, sql)
        } else {
            bail!("record {i} has neither `SQL` nor `query`");
        };
        if *format.get_or_insert(this) != this {
            bail!("record {i} mixes BIRD and Spider layouts");
        }
        let question = field(obj, "question").ok_or_else(|| anyhow!("record {i} has no `question`"))?;
        let db_id = field(obj, "db_id").ok_or_else(|| anyhow!("record {i} has no `db_id`"))?;
        items.push(BenchmarkItem {
            question: question.to_string(),
            hint: field(obj, "evidence").unwrap_or_default().to_string(),
            db_id: db_id.to_string(),
            gold_sql: gold.to_string(),
        });
    }
    Ok((format.unwrap_or(BenchmarkFormat::Bird), items))
}

/// Load a benchmark from a question file, or from `<dir>/<split>.json`.
pub fn load_benchmark(path: &Path, split: &str) -> Result<(BenchmarkFormat, Vec<BenchmarkItem>)> {
    let file = if path.is_dir() {
        let f = path.join(format!("{split}.json"));
        if !f.is_file() {
            bail!("{} has no {split}.json", path.display());
        }
        f
    } else {
        path.to_path_buf()
    };
    let text = std::fs::read_to_string(&file).with_context(|| format!("cannot read {}", file.display()))?;
    parse_benchmark(&text).with_context(|| format!("in {}", file.display()))
}

/// The SQLite file for `db_id` under `db_root` (`<root>/<id>/` or
/// `<root>/<id>.sqlite`).
pub fn resolve_db(db_root: &Path, db_id: &str) -> Option<PathBuf> {
    let dir = db_root.join(db_id);
    if dir.is_dir() {
        return resolve_database_file(&dir).ok();
    }
    ["sqlite", "db", "sqlite3"].iter().map(|ext| db_root.join(format!("{db_id}.{ext}"))).find(|p| p.is_file())
}

/// Database ids available under `db_root`, sorted.
pub fn available_db_ids(db_root: &Path) -> Vec<String> {
    let Ok(entries) = std::fs::read_dir(db_root) else {
        return Vec::new();
    };
    let mut ids: Vec<String> = entries
        .flatten()
        .filter_map(|e| {
            let path = e.path();
            let name = path.file_name()?.to_str()?.to_string();
            if path.is_dir() {
                resolve_database_file(&path).ok().map(|_| name)
            } else {
                let stem = path.file_stem()?.to_str()?.to_string();
                let ext = path.extension()?.to_str()?;
                matches!(ext, "sqlite" | "db" | "sqlite3").then_some(stem)
            }
        })
        .collect();
    ids.sort();
    ids.dedup();
    ids
}
