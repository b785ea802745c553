pub mod ask;
pub mod bench_nlu;
pub mod eval;
pub mod export;
pub mod index;

use std::path::Path;

use anyhow::{Context, Result};
use nlsql_core::config::PipelineConfig;
use nlsql_core::llm::{LlmCall, TokenUsage};
use nlsql_core::template::{PromptTemplate, UQU_TEMPLATE};

pub(crate) fn uqu_template() -> PromptTemplate {
    PromptTemplate::new(UQU_TEMPLATE, &["question", "hint"]).expect("shipped template is valid")
}

/// Cost of a set of calls, or `None` when a call with tokens has no price.
pub(crate) fn calls_cost(config: &PipelineConfig, calls: &[LlmCall]) -> Option<f64> {
    calls.iter().try_fold(0.0, |acc, c| {
        if c.usage.total() == 0 {
            Some(acc)
        } else {
            config.cost_usd(&c.model, c.usage).map(|x| acc + x)
        }
    })
}

pub(crate) fn usage_of(calls: &[LlmCall]) -> TokenUsage {
    let mut u = TokenUsage::default();
    for c in calls {
        u += c.usage;
    }
    u
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).with_context(|| format!("cannot write {}", path.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))
}
