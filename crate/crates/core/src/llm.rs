//! Language-model, embedding and re-ranking client abstractions.
//!
//! Concrete transports (HTTP endpoints, transcript mocks, caching wrappers)
//! live with the application; pipeline stages depend only on these traits.

use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("retries exhausted after {} attempts: {}", attempts.len(), attempts.join("; "))]
    Exhausted { attempts: Vec<String> },
    #[error("no scripted response matches the prompt")]
    NoScriptedResponse,
    #[error("bad response: {0}")]
    BadResponse(String),
}

impl LlmError {
    /// Whether a retry may succeed.
    pub fn is_transient(&self) -> bool {
        matches!(self, LlmError::Transport(_))
    }
}

/// A chat-style completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub system: Option<String>,
    pub user: String,
    pub temperature: f32,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, user: impl Into<String>) -> Self {
        Self { model: model.into(), system: None, user: user.into(), temperature: 0.0, max_tokens: 1024 }
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system = Some(system.into());
        self
    }

    pub fn with_temperature(mut self, temperature: f32) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    /// System and user text joined, as seen by prompt matchers.
    pub fn full_prompt(&self) -> String {
        match &self.system {
            Some(s) => format!("{s}\n\n{}", self.user),
            None => self.user.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    /// Rough token estimate (four characters per token) used when a
    /// transport does not report usage.
    pub fn estimate(prompt: &str, completion: &str) -> Self {
        Self {
            prompt_tokens: prompt.chars().count().div_ceil(4) as u64,
            completion_tokens: completion.chars().count().div_ceil(4) as u64,
        }
    }
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: TokenUsage,
    /// Served from a response cache.
    #[serde(default)]
    pub cached: bool,
}

impl ChatResponse {
    pub fn new(text: impl Into<String>, usage: TokenUsage) -> Self {
        Self { text: text.into(), usage, cached: false }
    }
}

pub trait LanguageModel: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

/// Text embedding client.
pub trait Embedder: Send + Sync {
    fn model_id(&self) -> &str;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, LlmError>;
}

/// Second-stage relevance scorer: one score per passage, higher is better.
pub trait Reranker: Send + Sync {
    fn score(&self, query: &str, passages: &[String]) -> Result<Vec<f64>, LlmError>;
}

/// One recorded model call, kept for traces and cost accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmCall {
    pub stage: String,
    pub model: String,
    pub prompt: String,
    pub response: Option<String>,
    pub error: Option<String>,
    pub usage: TokenUsage,
    pub cached: bool,
    pub latency_secs: f64,
}

/// Wraps a model and appends every call to a shared log under a stage label.
pub struct RecordingModel<'a, M: LanguageModel + ?Sized> {
    inner: &'a M,
    stage: String,
    log: &'a Mutex<Vec<LlmCall>>,
    /// Latencies are recorded as zero, so traces stay byte-stable.
    zero_latency: bool,
}

impl<'a, M: LanguageModel + ?Sized> RecordingModel<'a, M> {
    pub fn new(inner: &'a M, stage: impl Into<String>, log: &'a Mutex<Vec<LlmCall>>) -> Self {
        Self { inner, stage: stage.into(), log, zero_latency: false }
    }

    pub fn without_latency(mut self) -> Self {
        self.zero_latency = true;
        self
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for RecordingModel<'_, M> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let start = Instant::now();
        let result = self.inner.complete(request);
        let latency_secs = if self.zero_latency { 0.0 } else { start.elapsed().as_secs_f64() };
        let call = match &result {
            Ok(r) => LlmCall {
                stage: self.stage.clone(),
                model: request.model.clone(),
                prompt: request.full_prompt(),
                response: Some(r.text.clone()),
                error: None,
                usage: r.usage,
                cached: r.cached,
                latency_secs,
            },
            Err(e) => LlmCall {
                stage: self.stage.clone(),
                model: request.model.clone(),
                prompt: request.full_prompt(),
                response: None,
                error: Some(e.to_string()),
                usage: TokenUsage::default(),
                cached: false,
                latency_secs,
            },
        };
        self.log.lock().expect("call log poisoned").push(call);
        result
    }
}

/// Deterministic scripted model: returns responses in order, repeating the
/// last one once the script is exhausted. Intended for tests.
pub struct ScriptedModel {
    responses: Vec<String>,
    cursor: Mutex<usize>,
}

impl ScriptedModel {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self { responses: responses.into_iter().map(Into::into).collect(), cursor: Mutex::new(0) }
    }

    pub fn calls(&self) -> usize {
        *self.cursor.lock().expect("cursor poisoned")
    }
}

impl LanguageModel for ScriptedModel {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let mut cursor = self.cursor.lock().expect("cursor poisoned");
        let Some(last) = self.responses.len().checked_sub(1) else {
            return Err(LlmError::NoScriptedResponse);
        };
        let text = self.responses[(*cursor).min(last)].clone();
        *cursor += 1;
        let usage = TokenUsage::estimate(&request.full_prompt(), &text);
        Ok(ChatResponse::new(text, usage))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_model_repeats_last_response() {
        let m = ScriptedModel::new(["a", "b"]);
        let req = ChatRequest::new("m", "hi");
        let texts: Vec<_> = (0..4).map(|_| m.complete(&req).unwrap().text).collect();
        assert_eq!(texts, ["a", "b", "b", "b"]);
        assert_eq!(m.calls(), 4);
    }

    #[test]
    fn recording_model_logs_calls() {
        let m = ScriptedModel::new(["ok"]);
        let log = Mutex::new(Vec::new());
        let rec = RecordingModel::new(&m, "uqu", &log);
        rec.complete(&ChatRequest::new("m", "q").with_system("sys")).unwrap();
        let log = log.into_inner().unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].stage, "uqu");
        assert_eq!(log[0].prompt, "sys\n\nq");
        assert_eq!(log[0].response.as_deref(), Some("ok"));
    }

    #[test]
    fn usage_estimate_rounds_up() {
        let u = TokenUsage::estimate("abcde", "");
        assert_eq!(u.prompt_tokens, 2);
        assert_eq!(u.total(), 2);
    }
}
