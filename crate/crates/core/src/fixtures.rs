//! Newline-delimited fixture files for offline runs.
//!
//! One file may mix every record kind; each line is a JSON object:
//!
//! | shape | meaning |
//! |---|---|
//! | `{template_id, variables_hash, response_text}` | chat reply for an exact request; `variables_hash` may be `"*"` for a per-template default |
//! | `{template_id, contains, response_text}` | chat reply when the rendered prompt contains every listed substring (first match in file order) |
//! | `{text, vector}` | embedding for an exact text |
//! | `{tool_name, args_hash, result_text}` | offline tool result for exact arguments, or `"*"` |
//! | `{tool_name, contains, result_text}` | offline tool result when the canonical arguments contain every substring |
//! | `{settings: {fallback, echo_dim, simulated_latency_ms}}` | backend behaviour |
//!
//! Lookup order is exact, then `contains` rules, then `"*"`, then fallback.

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{ChatFixture, Fallback, FixtureMatch, TemplateId};

#[derive(Debug, Error, PartialEq)]
#[error("fixture line {line}: {message}")]
pub struct FixtureError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolFixture {
    pub tool_name: String,
    pub matcher: FixtureMatch,
    pub result_text: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSettings {
    #[serde(default)]
    pub fallback: Option<Fallback>,
    #[serde(default)]
    pub echo_dim: Option<usize>,
    #[serde(default)]
    pub simulated_latency_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixtureFile {
    pub chat: Vec<ChatFixture>,
    pub embeddings: Vec<(String, Vec<f64>)>,
    pub tools: Vec<ToolFixture>,
    pub fallback: Option<Fallback>,
    pub echo_dim: Option<usize>,
    pub simulated_latency_ms: Option<u64>,
}

fn string_list(v: &Value) -> Option<Vec<String>> {
    match v {
        Value::String(s) => Some(vec![s.clone()]),
        Value::Array(items) => items.iter().map(|i| i.as_str().map(str::to_string)).collect(),
        _ => None,
    }
}

fn matcher(obj: &serde_json::Map<String, Value>, hash_key: &str) -> Result<FixtureMatch, String> {
    match (obj.get(hash_key), obj.get("contains")) {
        (Some(Value::String(h)), None) if h == "*" => Ok(FixtureMatch::Any),
        (Some(Value::String(h)), None) => Ok(FixtureMatch::Exact(h.clone())),
        (None, Some(c)) => string_list(c)
            .filter(|l| !l.is_empty())
            .map(FixtureMatch::Contains)
            .ok_or_else(|| "contains must be a string or non-empty list of strings".into()),
        _ => Err(format!("exactly one of {hash_key} or contains required")),
    }
}

fn text_field(obj: &serde_json::Map<String, Value>, key: &str) -> Result<String, String> {
    obj.get(key)
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| format!("{key} must be a string"))
}

impl FixtureFile {
    pub fn parse(text: &str) -> Result<Self, FixtureError> {
        let mut out = FixtureFile::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| FixtureError { line: i + 1, message };
            let value: Value = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            let Value::Object(obj) = value else {
                return Err(err("record must be an object".into()));
            };
            if let Some(settings) = obj.get("settings") {
                let s: FixtureSettings =
                    serde_json::from_value(settings.clone()).map_err(|e| err(e.to_string()))?;
                out.fallback = s.fallback.or(out.fallback);
                out.echo_dim = s.echo_dim.or(out.echo_dim);
                out.simulated_latency_ms = s.simulated_latency_ms.or(out.simulated_latency_ms);
            } else if let Some(t) = obj.get("template_id") {
                let template_id: TemplateId = t
                    .as_str()
                    .ok_or_else(|| err("template_id must be a string".into()))?
                    .parse()
                    .map_err(|e: crate::gateway::GatewayError| err(e.to_string()))?;
                out.chat.push(ChatFixture {
                    template_id,
                    matcher: matcher(&obj, "variables_hash").map_err(err)?,
                    response_text: text_field(&obj, "response_text").map_err(err)?,
                });
            } else if obj.contains_key("tool_name") {
                out.tools.push(ToolFixture {
                    tool_name: text_field(&obj, "tool_name").map_err(err)?,
                    matcher: matcher(&obj, "args_hash").map_err(err)?,
                    result_text: text_field(&obj, "result_text").map_err(err)?,
                });
            } else if obj.contains_key("vector") {
                let text = text_field(&obj, "text").map_err(err)?;
                let vector: Vec<f64> = serde_json::from_value(obj["vector"].clone())
                    .map_err(|e| err(format!("vector: {e}")))?;
                out.embeddings.push((text, vector));
            } else {
                return Err(err("unrecognized record kind".into()));
            }
        }
        Ok(out)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, FixtureError> {
        let text = std::fs::read_to_string(path).map_err(|e| FixtureError {
            line: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        FixtureFile::parse(&text)
    }
}
