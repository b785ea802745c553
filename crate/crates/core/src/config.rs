//! Pipeline configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::DEFAULT_TIMEOUT_SECS;
use crate::retrieval::{DEFAULT_TOP_K_FINAL, DEFAULT_TOP_K_FIRST};

pub const DEFAULT_REVISION_THRESHOLD: u32 = 3;
/// Upper bound on the number of revisions any configuration may request.
pub const REVISION_HARD_CAP: u32 = 5;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid configuration: {}", .0.join("; "))]
pub struct ConfigError(pub Vec<String>);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    #[default]
    Minhash,
    Bm25,
}

impl std::str::FromStr for ScorerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "minhash" => Ok(Self::Minhash),
            "bm25" => Ok(Self::Bm25),
            other => Err(format!("unknown scorer {other:?} (expected minhash or bm25)")),
        }
    }
}

impl std::fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Minhash => "minhash",
            Self::Bm25 => "bm25",
        })
    }
}

/// A model id and the HTTP endpoint serving it. Without an endpoint the
/// built-in offline implementation is used where one exists (embedder,
/// re-ranker).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelEndpoint {
    pub model: String,
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
}

impl ModelEndpoint {
    pub fn named(model: &str) -> Self {
        Self { model: model.to_string(), ..Self::default() }
    }
}

impl Default for ModelEndpoint {
    fn default() -> Self {
        Self { model: String::new(), endpoint: None, api_key_env: None, timeout_secs: 120.0 }
    }
}

/// USD per 1,000 tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub prompt_per_1k: f64,
    pub completion_per_1k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub uqu: ModelEndpoint,
    pub generation: ModelEndpoint,
    pub revision: ModelEndpoint,
    pub judge: ModelEndpoint,
    pub embedder: ModelEndpoint,
    pub reranker: ModelEndpoint,
    pub scorer: ScorerKind,
    pub num_permutations: usize,
    pub max_values_per_column: usize,
    pub include_views: bool,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub top_k_first: usize,
    pub top_k_final: usize,
    pub revision_threshold: u32,
    /// Spend one revision on queries that run but return no rows.
    pub revise_on_empty: bool,
    pub sql_timeout_secs: f64,
    pub temperature: f32,
    pub max_tokens: u32,
    pub llm_retries: u32,
    pub retry_base_delay_ms: u64,
    pub cache_dir: PathBuf,
    pub seed: u64,
    /// Eval worker pool width; 0 means one per CPU.
    pub workers: usize,
    /// Record wall-clock timings in traces. Disable for byte-stable output.
    pub record_timings: bool,
    pub prices: BTreeMap<String, ModelPrice>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            uqu: ModelEndpoint::named("uqu"),
            generation: ModelEndpoint::named("generation"),
            revision: ModelEndpoint::named("generation"),
            judge: ModelEndpoint::named("judge"),
            embedder: ModelEndpoint::named("hashing-256"),
            reranker: ModelEndpoint::named("lexical"),
            scorer: ScorerKind::Minhash,
            num_permutations: 128,
            max_values_per_column: crate::catalog::DEFAULT_MAX_VALUES_PER_COLUMN,
            include_views: false,
            bm25_k1: crate::bm25::DEFAULT_K1,
            bm25_b: crate::bm25::DEFAULT_B,
            top_k_first: DEFAULT_TOP_K_FIRST,
            top_k_final: DEFAULT_TOP_K_FINAL,
            revision_threshold: DEFAULT_REVISION_THRESHOLD,
            revise_on_empty: false,
            sql_timeout_secs: DEFAULT_TIMEOUT_SECS,
            temperature: 0.0,
            max_tokens: 1024,
            llm_retries: 3,
            retry_base_delay_ms: 500,
            cache_dir: PathBuf::from(".nlsql-cache"),
            seed: 0,
            workers: 0,
            record_timings: true,
            prices: BTreeMap::new(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        if !(1..=REVISION_HARD_CAP).contains(&self.revision_threshold) {
            errors.push(format!(
                "revision_threshold must be between 1 and {REVISION_HARD_CAP}, got {}",
                self.revision_threshold
            ));
        }
        if self.top_k_final == 0 || self.top_k_final > self.top_k_first {
            errors.push(format!(
                "top_k_final ({}) must be between 1 and top_k_first ({})",
                self.top_k_final, self.top_k_first
            ));
        }
        if self.num_permutations < crate::minhash::MIN_PERMUTATIONS {
            errors.push(format!(
                "num_permutations must be at least {}, got {}",
                crate::minhash::MIN_PERMUTATIONS,
                self.num_permutations
            ));
        }
        if !(self.sql_timeout_secs.is_finite() && self.sql_timeout_secs > 0.0) {
            errors.push("sql_timeout_secs must be positive".to_string());
        }
        if self.max_values_per_column == 0 {
            errors.push("max_values_per_column must be positive".to_string());
        }
        if !(self.bm25_k1 >= 0.0 && (0.0..=1.0).contains(&self.bm25_b)) {
            errors.push("bm25_k1 must be >= 0 and bm25_b within [0, 1]".to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(errors))
        }
    }

    /// Cost in USD of `usage` on `model`, or `None` when the model has no price.
    pub fn cost_usd(&self, model: &str, usage: crate::llm::TokenUsage) -> Option<f64> {
        self.prices.get(model).map(|p| {
            usage.prompt_tokens as f64 / 1000.0 * p.prompt_per_1k
                + usage.completion_tokens as f64 / 1000.0 * p.completion_per_1k
        })
    }
}
