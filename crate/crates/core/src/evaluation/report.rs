//! Per-item records, aggregation and report output.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::llm::TokenUsage;

use super::judge::{CalibrationModel, JUDGE_MAX, JUDGE_MIN};
use super::metrics::Prf;

/// Error categories used to tag failed items during manual analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCategory {
    #[serde(rename = "evidence-misalignment")]
    EvidenceMisalignment,
    #[serde(rename = "incorrect-column")]
    IncorrectColumn,
    #[serde(rename = "incorrect-filtering")]
    IncorrectFiltering,
    #[serde(rename = "description-issue")]
    DescriptionIssue,
    #[serde(rename = "incorrect-aggregation")]
    IncorrectAggregation,
    #[serde(rename = "group-by/distinct/rank")]
    GroupByDistinctRank,
    #[serde(rename = "incorrect-operation")]
    IncorrectOperation,
    #[serde(rename = "date-handling")]
    DateHandling,
    #[serde(rename = "null-handling")]
    NullHandling,
    #[serde(rename = "revision-error")]
    RevisionError,
    #[serde(rename = "incorrect-table")]
    IncorrectTable,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 11] = [
        Self::EvidenceMisalignment,
        Self::IncorrectColumn,
        Self::IncorrectFiltering,
        Self::DescriptionIssue,
        Self::IncorrectAggregation,
        Self::GroupByDistinctRank,
        Self::IncorrectOperation,
        Self::DateHandling,
        Self::NullHandling,
        Self::RevisionError,
        Self::IncorrectTable,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::EvidenceMisalignment => "evidence-misalignment",
            Self::IncorrectColumn => "incorrect-column",
            Self::IncorrectFiltering => "incorrect-filtering",
            Self::DescriptionIssue => "description-issue",
            Self::IncorrectAggregation => "incorrect-aggregation",
            Self::GroupByDistinctRank => "group-by/distinct/rank",
            Self::IncorrectOperation => "incorrect-operation",
            Self::DateHandling => "date-handling",
            Self::NullHandling => "null-handling",
            Self::RevisionError => "revision-error",
            Self::IncorrectTable => "incorrect-table",
        }
    }
}

impl std::str::FromStr for ErrorCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|c| c.as_str() == s.trim()).ok_or_else(|| format!("unknown error category {s:?}"))
    }
}

impl std::fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ItemStatus {
    Match,
    Mismatch,
    PredFailed,
    InvalidGold,
    /// The pipeline stopped before producing SQL.
    PipelineError,
}

/// One benchmark item's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub index: usize,
    pub db_id: String,
    pub question: String,
    pub gold_sql: String,
    pub pred_sql: String,
    pub status: ItemStatus,
    /// `None` when the item is excluded (invalid gold).
    pub ex: Option<bool>,
    pub revisions: u32,
    pub error: Option<String>,
    pub usage: TokenUsage,
    pub cost_usd: Option<f64>,
    pub model_latency_secs: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<ErrorCategory>,
}

/// One question-understanding item's scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NluItemRecord {
    pub index: usize,
    pub question: String,
    pub bleu1: f64,
    pub bleu2: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub keyword: Prf,
    pub judge_raw: Option<f64>,
    pub error: Option<String>,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    pub valid: usize,
    pub invalid_gold: usize,
    pub correct: usize,
    pub pipeline_errors: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// `None` when any model lacks a price.
    pub cost_usd: Option<f64>,
    pub model_latency_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub counts: Counts,
    /// Mean EX over valid items; `None` when no item is valid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ex: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keyword_precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keyword_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keyword_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge2: Option<f64>,
    #[serde(rename = "rougeL", skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge_raw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge_calibrated: Option<f64>,
    pub totals: Totals,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub error_histogram: BTreeMap<String, usize>,
    pub metadata: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub items: Vec<ItemRecord>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub nlu_items: Vec<NluItemRecord>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn totals<'a>(usages: impl Iterator<Item = (TokenUsage, Option<f64>, f64)> + 'a) -> Totals {
    let mut t = Totals { cost_usd: Some(0.0), ..Default::default() };
    for (u, cost, latency) in usages {
        t.prompt_tokens += u.prompt_tokens;
        t.completion_tokens += u.completion_tokens;
        t.model_latency_secs += latency;
        t.cost_usd = match (t.cost_usd, cost) {
            (Some(a), Some(b)) => Some(a + b),
            (_, None) if u.total() == 0 => t.cost_usd,
            _ => None,
        };
    }
    t
}

/// Fold execution items into a report. Items are ordered by index first, so
/// the result does not depend on completion order. `tags` adds error
/// categories by item index.
pub fn aggregate(items: &[ItemRecord], tags: Option<&BTreeMap<usize, Vec<ErrorCategory>>>) -> MetricReport {
    let mut items = items.to_vec();
    items.sort_by_key(|i| i.index);
    if let Some(tags) = tags {
        for item in &mut items {
            if let Some(t) = tags.get(&item.index) {
                item.tags = t.clone();
            }
        }
    }
    let valid: Vec<bool> = items.iter().filter_map(|i| i.ex).collect();
    let counts = Counts {
        total: items.len(),
        valid: valid.len(),
        invalid_gold: items.iter().filter(|i| i.status == ItemStatus::InvalidGold).count(),
        correct: valid.iter().filter(|&&b| b).count(),
        pipeline_errors: items.iter().filter(|i| i.status == ItemStatus::PipelineError).count(),
    };
    let mut histogram = BTreeMap::new();
    for t in items.iter().flat_map(|i| &i.tags) {
        *histogram.entry(t.as_str().to_string()).or_insert(0) += 1;
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("kind".into(), "execution".into());
    metadata.insert("ex_comparison".into(), "multiset".into());
    if counts.valid == 0 {
        metadata.insert("ex_undefined".into(), "no item has an executable gold query".into());
    }
    MetricReport {
        ex: mean(valid.iter().map(|&b| f64::from(u8::from(b)))),
        counts,
        keyword_precision: None,
        keyword_recall: None,
        keyword_f1: None,
        bleu1: None,
        bleu2: None,
        rouge1: None,
        rouge2: None,
        rouge_l: None,
        judge_raw: None,
        judge_calibrated: None,
        totals: totals(items.iter().map(|i| (i.usage, i.cost_usd, i.model_latency_secs))),
        error_histogram: histogram,
        metadata,
        items,
        nlu_items: Vec::new(),
    }
}

/// Fold question-understanding items into a report (macro averages). Judge
/// columns are present only when some item has a judge score.
pub fn aggregate_nlu(items: &[NluItemRecord], calibration: &CalibrationModel, costs: &[Option<f64>]) -> MetricReport {
    let mut items = items.to_vec();
    items.sort_by_key(|i| i.index);
    let judge_raw = mean(items.iter().filter_map(|i| i.judge_raw));
    let mut metadata = BTreeMap::new();
    metadata.insert("kind".into(), "nlu".into());
    metadata.insert("keyword_averaging".into(), "macro".into());
    metadata.insert("calibration".into(), format!("{} * raw + {}", calibration.slope(), calibration.intercept()));
    if judge_raw.is_none() {
        metadata.insert("judge".into(), "disabled; judge columns omitted".into());
    }
    let errors = items.iter().filter(|i| i.error.is_some()).count();
    MetricReport {
        counts: Counts {
            total: items.len(),
            valid: items.len() - errors,
            invalid_gold: 0,
            correct: 0,
            pipeline_errors: errors,
        },
        ex: None,
        keyword_precision: mean(items.iter().map(|i| i.keyword.precision)),
        keyword_recall: mean(items.iter().map(|i| i.keyword.recall)),
        keyword_f1: mean(items.iter().map(|i| i.keyword.f1)),
        bleu1: mean(items.iter().map(|i| i.bleu1)),
        bleu2: mean(items.iter().map(|i| i.bleu2)),
        rouge1: mean(items.iter().map(|i| i.rouge1)),
        rouge2: mean(items.iter().map(|i| i.rouge2)),
        rouge_l: mean(items.iter().map(|i| i.rouge_l)),
        judge_calibrated: judge_raw.map(|r| calibration.calibrate(r).clamp(JUDGE_MIN, JUDGE_MAX)),
        judge_raw,
        totals: totals(items.iter().enumerate().map(|(k, i)| (i.usage, costs.get(k).copied().flatten(), 0.0))),
        error_histogram: BTreeMap::new(),
        metadata,
        items: Vec::new(),
        nlu_items: items,
    }
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Aligned two-column summary for terminals.
    pub fn to_text_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        let mut rows: Vec<(String, String)> = vec![("items".into(), self.counts.total.to_string())];
        if self.metadata.get("kind").map(String::as_str) == Some("execution") {
            rows.push(("valid".into(), self.counts.valid.to_string()));
            rows.push(("invalid gold (excluded)".into(), self.counts.invalid_gold.to_string()));
            rows.push(("correct".into(), self.counts.correct.to_string()));
            rows.push(("pipeline errors".into(), self.counts.pipeline_errors.to_string()));
            rows.push(("EX".into(), fmt(self.ex)));
        } else {
            for (name, v) in [
                ("BLEU-1", self.bleu1),
                ("BLEU-2", self.bleu2),
                ("ROUGE-1", self.rouge1),
                ("ROUGE-2", self.rouge2),
                ("ROUGE-L", self.rouge_l),
            ] {
                rows.push((name.into(), fmt(v)));
            }
            if self.judge_raw.is_some() {
                rows.push(("judge (raw)".into(), fmt(self.judge_raw)));
                rows.push(("judge (calibrated)".into(), fmt(self.judge_calibrated)));
            }
            rows.push(("keyword precision".into(), fmt(self.keyword_precision)));
            rows.push(("keyword recall".into(), fmt(self.keyword_recall)));
            rows.push(("keyword F1".into(), fmt(self.keyword_f1)));
        }
        rows.push((
            "tokens (prompt/completion)".into(),
            format!("{}/{}", self.totals.prompt_tokens, self.totals.completion_tokens),
        ));
        rows.push((
            "cost (USD)".into(),
            self.totals.cost_usd.map_or_else(|| "unknown".to_string(), |c| format!("{c:.4}")),
        ));
        for (k, v) in &self.error_histogram {
            rows.push((format!("error: {k}"), v.to_string()));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }

    /// Per-item CSV for error analysis.
    pub fn items_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if !self.items.is_empty() || self.nlu_items.is_empty() {
            w.write_record([
                "index",
                "db_id",
                "status",
                "ex",
                "revisions",
                "question",
                "gold_sql",
                "pred_sql",
                "error",
                "prompt_tokens",
                "completion_tokens",
                "tags",
            ])?;
            for i in &self.items {
                let status = serde_json::to_value(i.status).expect("status serializes");
                w.write_record([
                    i.index.to_string(),
                    i.db_id.clone(),
                    status.as_str().unwrap_or_default().to_string(),
                    i.ex.map_or_else(String::new, |b| u8::from(b).to_string()),
                    i.revisions.to_string(),
                    i.question.clone(),
                    i.gold_sql.clone(),
                    i.pred_sql.clone(),
                    i.error.clone().unwrap_or_default(),
                    i.usage.prompt_tokens.to_string(),
                    i.usage.completion_tokens.to_string(),
                    i.tags.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(";"),
                ])?;
            }
        } else {
            w.write_record([
                "index",
                "question",
                "bleu1",
                "bleu2",
                "rouge1",
                "rouge2",
                "rougeL",
                "precision",
                "recall",
                "f1",
                "judge_raw",
                "error",
            ])?;
            for i in &self.nlu_items {
                w.write_record([
                    i.index.to_string(),
                    i.question.clone(),
                    format!("{:.6}", i.bleu1),
                    format!("{:.6}", i.bleu2),
                    format!("{:.6}", i.rouge1),
                    format!("{:.6}", i.rouge2),
                    format!("{:.6}", i.rouge_l),
                    format!("{:.6}", i.keyword.precision),
                    format!("{:.6}", i.keyword.recall),
                    format!("{:.6}", i.keyword.f1),
                    i.judge_raw.map_or_else(String::new, |j| format!("{j:.3}")),
                    i.error.clone().unwrap_or_default(),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
