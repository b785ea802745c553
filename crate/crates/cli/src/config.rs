//! Configuration file loading with `${VAR}` interpolation.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use anyhow::{bail, Context, Result};
use nlsql_core::config::PipelineConfig;
use regex::Regex;
use serde::{Deserialize, Serialize};

/// Contents of the TOML configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AppConfig {
    /// Directory holding one sub-directory per database.
    #[serde(default)]
    pub db_root: Option<PathBuf>,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
}

fn var_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}").expect("valid regex"))
}

/// Replace `${NAME}` (or `${NAME:-default}`) with environment values.
pub fn interpolate(text: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<String> {
    let mut missing = Vec::new();
    let out = var_pattern().replace_all(text, |c: &regex::Captures<'_>| {
        let name = &c[1];
        match (lookup(name), c.get(2)) {
            (Some(v), _) => v,
            (None, Some(default)) => default.as_str().to_string(),
            (None, None) => {
                missing.push(name.to_string());
                String::new()
            }
        }
    });
    if !missing.is_empty() {
        bail!("undefined environment variable(s): {}", missing.join(", "));
    }
    Ok(out.into_owned())
}

fn interpolate_value(value: &mut toml::Value, lookup: &dyn Fn(&str) -> Option<String>) -> Result<()> {
    match value {
        toml::Value::String(s) => *s = interpolate(s, lookup)?,
        toml::Value::Array(items) => {
            for v in items {
                interpolate_value(v, lookup)?;
            }
        }
        toml::Value::Table(t) => {
            for (_, v) in t.iter_mut() {
                interpolate_value(v, lookup)?;
            }
        }
        _ => {}
    }
    Ok(())
}

pub fn parse_config(text: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<AppConfig> {
    let mut value: toml::Value = toml::from_str(text).context("invalid TOML")?;
    interpolate_value(&mut value, lookup)?;
    let config: AppConfig = value.try_into().context("invalid configuration")?;
    Ok(config)
}

/// Load `path`, or defaults when no file is given.
pub fn load_config(path: Option<&Path>) -> Result<AppConfig> {
    let Some(path) = path else {
        return Ok(AppConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_config(&text, &|name| std::env::var(name).ok()).with_context(|| format!("in {}", path.display()))
}
