//! Model-judged decomposition scores and their linear calibration.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatRequest, LanguageModel, LlmError};
use crate::template::PromptTemplate;
use crate::uqu::TaskDecomposition;

pub const JUDGE_MIN: f64 = 1.0;
pub const JUDGE_MAX: f64 = 5.0;

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("calibration slope must be positive and finite, got {0}")]
    BadSlope(f64),
    #[error("judge reply has no usable score in [1, 5]: {raw:?}")]
    Unparseable { raw: Vec<String> },
    #[error(transparent)]
    Model(#[from] LlmError),
}

/// Affine map from raw judge scores to human-aligned scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    slope: f64,
    intercept: f64,
}

impl CalibrationModel {
    pub const DEFAULT_SLOPE: f64 = 1.015;
    pub const DEFAULT_INTERCEPT: f64 = 0.042;

    pub fn new(slope: f64, intercept: f64) -> Result<Self, JudgeError> {
        if !(slope.is_finite() && slope > 0.0 && intercept.is_finite()) {
            return Err(JudgeError::BadSlope(slope));
        }
        Ok(Self { slope, intercept })
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    /// `slope * raw + intercept`, unclamped.
    pub fn calibrate(&self, raw: f64) -> f64 {
        self.slope * raw + self.intercept
    }
}

impl Default for CalibrationModel {
    fn default() -> Self {
        Self { slope: Self::DEFAULT_SLOPE, intercept: Self::DEFAULT_INTERCEPT }
    }
}

/// Calibrate with the default coefficients.
pub fn calibrate(raw: f64) -> f64 {
    CalibrationModel::default().calibrate(raw)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParsedScore {
    Score(f64),
    OutOfRange(f64),
    Missing,
}

/// First number in a judge reply, checked against the 1 to 5 scale.
pub fn parse_judge_reply(reply: &str) -> ParsedScore {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"[-+]?\d+(?:\.\d+)?").expect("valid regex"));
    match re.find(reply).and_then(|m| m.as_str().parse::<f64>().ok()) {
        Some(x) if (JUDGE_MIN..=JUDGE_MAX).contains(&x) => ParsedScore::Score(x),
        Some(x) => ParsedScore::OutOfRange(x),
        None => ParsedScore::Missing,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeScore {
    pub raw: f64,
    pub responses: Vec<String>,
}

/// Ask the judge to rate `candidate` against `gold`; one re-ask when the
/// reply has no score in range.
pub fn judge_score(
    llm: &dyn LanguageModel,
    candidate: &TaskDecomposition,
    gold: &TaskDecomposition,
    rubric: &PromptTemplate,
    model: &str,
) -> Result<JudgeScore, JudgeError> {
    let candidate_text = candidate.as_text();
    let gold_text = gold.as_text();
    let prompt = rubric.render(&[("candidate", candidate_text.as_str()), ("reference", gold_text.as_str())]);
    let mut responses = Vec::new();
    let first = llm.complete(&ChatRequest::new(model, prompt.clone()).with_max_tokens(16))?;
    responses.push(first.text.clone());
    if let ParsedScore::Score(raw) = parse_judge_reply(&first.text) {
        return Ok(JudgeScore { raw, responses });
    }
    let reask = format!(
        "{prompt}\n\nYour previous reply ({:?}) was not a single number from 1 to 5. Reply with only that number.",
        first.text
    );
    let second = llm.complete(&ChatRequest::new(model, reask).with_max_tokens(16))?;
    responses.push(second.text.clone());
    match parse_judge_reply(&second.text) {
        ParsedScore::Score(raw) => Ok(JudgeScore { raw, responses }),
        _ => Err(JudgeError::Unparseable { raw: responses }),
    }
}
