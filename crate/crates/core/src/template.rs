//! Plain-text prompt templates with `{{name}}` placeholders.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template is missing placeholder {{{{{0}}}}}")]
    MissingPlaceholder(String),
    #[error("cannot read template {path}: {message}")]
    Read { path: String, message: String },
}

pub const UQU_TEMPLATE: &str = include_str!("../templates/uqu.txt");
pub const GENERATION_SYSTEM: &str = include_str!("../templates/generation_system.txt");
pub const CONSTRAINTS_V1: &str = include_str!("../templates/constraints_v1.txt");
pub const INCENTIVES_V1: &str = include_str!("../templates/incentives_v1.txt");
pub const REVISION_TEMPLATE: &str = include_str!("../templates/revision.txt");
pub const JUDGE_RUBRIC: &str = include_str!("../templates/judge_rubric.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    /// Accepts `text` only if every name in `required` appears as a placeholder.
    pub fn new(text: impl Into<String>, required: &[&str]) -> Result<Self, TemplateError> {
        let text = text.into();
        for name in required {
            if !text.contains(&format!("{{{{{name}}}}}")) {
                return Err(TemplateError::MissingPlaceholder((*name).to_string()));
            }
        }
        Ok(Self { text })
    }

    pub fn from_file(path: &Path, required: &[&str]) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TemplateError::Read { path: path.display().to_string(), message: e.to_string() })?;
        Self::new(text, required)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Substitute placeholders in one pass, so substituted values are never
    /// re-scanned for placeholders.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            match after.find("}}") {
                Some(end) => {
                    let name = &after[..end];
                    match vars.iter().find(|(k, _)| *k == name) {
                        Some((_, v)) => out.push_str(v),
                        None => {
                            out.push_str("{{");
                            out.push_str(name);
                            out.push_str("}}");
                        }
                    }
                    rest = &after[end + 2..];
                }
                None => {
                    out.push_str(&rest[start..]);
                    rest = "";
                }
            }
        }
        out.push_str(rest);
        out
    }
}
