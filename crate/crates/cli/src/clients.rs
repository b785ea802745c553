//! Model clients: OpenAI-compatible HTTP chat, embedding and re-rank
//! endpoints, transcript mocks, and the caching/retrying wrapper.

use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use nlsql_core::config::ModelEndpoint;
use nlsql_core::llm::{ChatRequest, ChatResponse, Embedder, LanguageModel, LlmError, Reranker, TokenUsage};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::cache::{request_key, CacheStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl RetryPolicy {
    pub fn new(max_retries: u32, base_delay_ms: u64) -> Self {
        Self { max_retries, base_delay: Duration::from_millis(base_delay_ms), max_delay: Duration::from_secs(30) }
    }

    /// Delay before retry number `retry` (1-based): base · 2^(retry−1), capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.saturating_sub(1));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub response: ChatResponse,
    /// Transport attempts made; 0 for a cache hit.
    pub attempts: u32,
    pub cached: bool,
}

/// Cache-first completion with bounded exponential-backoff retries on
/// transient failures. Successful responses are written to the cache.
pub fn llm_complete(
    model: &dyn LanguageModel,
    request: &ChatRequest,
    cache: Option<&CacheStore>,
    policy: &RetryPolicy,
    sleep: &dyn Fn(Duration),
) -> Result<Completion, LlmError> {
    let key = request_key(request);
    if let Some(entry) = cache.and_then(|c| c.get(&key)) {
        return Ok(Completion {
            response: ChatResponse { text: entry.payload, usage: entry.usage, cached: true },
            attempts: 0,
            cached: true,
        });
    }
    let mut log = Vec::new();
    for attempt in 1..=policy.max_retries + 1 {
        match model.complete(request) {
            Ok(response) => {
                if let Some(c) = cache {
                    if let Err(e) = c.put(&request.model, &key, &response.text, response.usage) {
                        log::warn!("cannot write cache entry: {e:#}");
                    }
                }
                return Ok(Completion { response, attempts: attempt, cached: false });
            }
            Err(e) if e.is_transient() => {
                log::warn!("attempt {attempt} failed: {e}");
                log.push(format!("attempt {attempt}: {e}"));
                if attempt <= policy.max_retries {
                    sleep(policy.delay(attempt));
                }
            }
            Err(e) => return Err(e),
        }
    }
    Err(LlmError::Exhausted { attempts: log })
}

/// Wraps a transport with the response cache and retry policy.
pub struct CachedModel {
    inner: Box<dyn LanguageModel>,
    cache: Option<Arc<CacheStore>>,
    policy: RetryPolicy,
}

impl CachedModel {
    pub fn new(inner: Box<dyn LanguageModel>, cache: Option<Arc<CacheStore>>, policy: RetryPolicy) -> Self {
        Self { inner, cache, policy }
    }
}

impl LanguageModel for CachedModel {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        llm_complete(self.inner.as_ref(), request, self.cache.as_deref(), &self.policy, &std::thread::sleep)
            .map(|c| c.response)
    }
}

fn http_client(timeout_secs: f64) -> Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs_f64(timeout_secs.max(1.0)))
        .build()
        .context("cannot build HTTP client")
}

fn api_key(endpoint: &ModelEndpoint) -> Result<Option<String>> {
    match &endpoint.api_key_env {
        None => Ok(None),
        Some(var) => std::env::var(var)
            .map(Some)
            .with_context(|| format!("environment variable {var} (API key for {}) is not set", endpoint.model)),
    }
}

fn url(base: &str, suffix: &str) -> String {
    let base = base.trim_end_matches('/');
    if base.ends_with(suffix) {
        base.to_string()
    } else {
        format!("{base}/{suffix}")
    }
}

fn post_json(
    client: &reqwest::blocking::Client,
    url: &str,
    key: Option<&str>,
    body: &Value,
) -> Result<Value, LlmError> {
    let mut req = client.post(url).json(body);
    if let Some(k) = key {
        req = req.bearer_auth(k);
    }
    let resp = req.send().map_err(|e| LlmError::Transport(e.to_string()))?;
    let status = resp.status();
    let text = resp.text().map_err(|e| LlmError::Transport(e.to_string()))?;
    if status.as_u16() == 429 || status.is_server_error() {
        return Err(LlmError::Transport(format!("HTTP {status}: {text}")));
    }
    if !status.is_success() {
        return Err(LlmError::BadResponse(format!("HTTP {status}: {text}")));
    }
    serde_json::from_str(&text).map_err(|e| LlmError::BadResponse(format!("invalid JSON: {e}")))
}

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpChatModel {
    client: reqwest::blocking::Client,
    url: String,
    key: Option<String>,
}

impl HttpChatModel {
    pub fn new(endpoint: &ModelEndpoint) -> Result<Self> {
        let Some(base) = &endpoint.endpoint else {
            bail!("model {:?} has no endpoint configured (use --mock for offline runs)", endpoint.model);
        };
        Ok(Self {
            client: http_client(endpoint.timeout_secs)?,
            url: url(base, "chat/completions"),
            key: api_key(endpoint)?,
        })
    }
}

impl LanguageModel for HttpChatModel {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let mut messages = Vec::new();
        if let Some(s) = &request.system {
            messages.push(json!({"role": "system", "content": s}));
        }
        messages.push(json!({"role": "user", "content": request.user}));
        let body = json!({
            "model": request.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let v = post_json(&self.client, &self.url, self.key.as_deref(), &body)?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| LlmError::BadResponse("missing choices[0].message.content".into()))?
            .to_string();
        let usage = match (
            v.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
            v.pointer("/usage/completion_tokens").and_then(Value::as_u64),
        ) {
            (Some(p), Some(c)) => TokenUsage { prompt_tokens: p, completion_tokens: c },
            _ => TokenUsage::estimate(&request.full_prompt(), &text),
        };
        Ok(ChatResponse::new(text, usage))
    }
}

/// OpenAI-compatible `/embeddings` client.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    url: String,
    key: Option<String>,
    model: String,
}

impl HttpEmbedder {
    pub fn new(endpoint: &ModelEndpoint) -> Result<Self> {
        let Some(base) = &endpoint.endpoint else {
            bail!("embedder {:?} has no endpoint configured", endpoint.model);
        };
        Ok(Self {
            client: http_client(endpoint.timeout_secs)?,
            url: url(base, "embeddings"),
            key: api_key(endpoint)?,
            model: endpoint.model.clone(),
        })
    }
}

impl Embedder for HttpEmbedder {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, LlmError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let v = post_json(&self.client, &self.url, self.key.as_deref(), &json!({"model": self.model, "input": texts}))?;
        let data = v
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| LlmError::BadResponse("missing data array".into()))?;
        let mut out: Vec<Option<Vec<f32>>> = vec![None; texts.len()];
        for (pos, d) in data.iter().enumerate() {
            let idx = d.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
            let emb: Vec<f32> = d
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| LlmError::BadResponse("missing embedding".into()))?
                .iter()
                .map(|x| x.as_f64().unwrap_or(0.0) as f32)
                .collect();
            if let Some(slot) = out.get_mut(idx) {
                *slot = Some(emb);
            }
        }
        out.into_iter().map(|o| o.ok_or_else(|| LlmError::BadResponse("embedding count mismatch".into()))).collect()
    }
}

/// Cross-encoder style `/rerank` client (`query`, `documents` →
/// `results[{index, relevance_score}]`).
pub struct HttpReranker {
    client: reqwest::blocking::Client,
    url: String,
    key: Option<String>,
    model: String,
}

impl HttpReranker {
    pub fn new(endpoint: &ModelEndpoint) -> Result<Self> {
        let Some(base) = &endpoint.endpoint else {
            bail!("re-ranker {:?} has no endpoint configured", endpoint.model);
        };
        Ok(Self {
            client: http_client(endpoint.timeout_secs)?,
            url: url(base, "rerank"),
            key: api_key(endpoint)?,
            model: endpoint.model.clone(),
        })
    }
}

impl Reranker for HttpReranker {
    fn score(&self, query: &str, passages: &[String]) -> Result<Vec<f64>, LlmError> {
        let v = post_json(
            &self.client,
            &self.url,
            self.key.as_deref(),
            &json!({"model": self.model, "query": query, "documents": passages}),
        )?;
        let results = v
            .get("results")
            .and_then(Value::as_array)
            .ok_or_else(|| LlmError::BadResponse("missing results array".into()))?;
        let mut scores = vec![None; passages.len()];
        for r in results {
            let idx = r.get("index").and_then(Value::as_u64).map(|i| i as usize);
            let s = r.get("relevance_score").and_then(Value::as_f64);
            if let (Some(i), Some(s)) = (idx, s) {
                if let Some(slot) = scores.get_mut(i) {
                    *slot = Some(s);
                }
            }
        }
        scores
            .into_iter()
            .map(|s| s.ok_or_else(|| LlmError::BadResponse("re-ranker skipped a passage".into())))
            .collect()
    }
}

/// One transcript rule. An entry applies when its model filter (if any)
/// equals the request model and its hash or regex (if any) matches the full
/// prompt. Responses are served in order; the last one repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    pub responses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum TranscriptFile {
    Wrapped { entries: Vec<TranscriptEntry> },
    Bare(Vec<TranscriptEntry>),
}

pub fn prompt_sha256(request: &ChatRequest) -> String {
    hex::encode(Sha256::digest(request.full_prompt().as_bytes()))
}

/// Scripted offline model driven by a transcript file.
pub struct TranscriptModel {
    entries: Vec<(TranscriptEntry, Option<Regex>)>,
    cursors: Mutex<Vec<usize>>,
}

impl TranscriptModel {
    pub fn new(entries: Vec<TranscriptEntry>) -> Result<Self> {
        let mut compiled = Vec::with_capacity(entries.len());
        for (i, e) in entries.into_iter().enumerate() {
            if e.responses.is_empty() {
                bail!("transcript entry {i} has no responses");
            }
            let re = e
                .pattern
                .as_deref()
                .map(Regex::new)
                .transpose()
                .with_context(|| format!("transcript entry {i} has an invalid regex"))?;
            compiled.push((e, re));
        }
        let n = compiled.len();
        Ok(Self { entries: compiled, cursors: Mutex::new(vec![0; n]) })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: TranscriptFile = serde_json::from_str(text).context("invalid transcript JSON")?;
        Self::new(match file {
            TranscriptFile::Wrapped { entries } | TranscriptFile::Bare(entries) => entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// True when some entry names `model` explicitly.
    pub fn names_model(&self, model: &str) -> bool {
        self.entries.iter().any(|(e, _)| e.model.as_deref() == Some(model))
    }

    fn find(&self, request: &ChatRequest) -> Option<usize> {
        let prompt = request.full_prompt();
        let mut hash = None;
        self.entries.iter().position(|(e, re)| {
            if e.model.as_deref().is_some_and(|m| m != request.model) {
                return false;
            }
            if let Some(h) = &e.prompt_sha256 {
                let actual = hash.get_or_insert_with(|| prompt_sha256(request));
                if !h.eq_ignore_ascii_case(actual) {
                    return false;
                }
            }
            re.as_ref().is_none_or(|re| re.is_match(&prompt))
        })
    }
}

impl LanguageModel for TranscriptModel {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let i = self.find(request).ok_or(LlmError::NoScriptedResponse)?;
        let mut cursors = self.cursors.lock().unwrap_or_else(|p| p.into_inner());
        let responses = &self.entries[i].0.responses;
        let text = responses[cursors[i].min(responses.len() - 1)].clone();
        cursors[i] += 1;
        let usage = TokenUsage::estimate(&request.full_prompt(), &text);
        Ok(ChatResponse::new(text, usage))
    }
}
