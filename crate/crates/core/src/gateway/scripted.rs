//! Deterministic fixture-driven backend for chat and embeddings.

use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{canonical_hash, BackendError, ChatBackend, ChatCall, ChatReply, EmbedBackend, TemplateId};
use crate::fixtures::FixtureFile;
use crate::text::is_cjk;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Unmatched requests fail with a fixture-miss error.
    #[default]
    Error,
    /// Chat echoes the rendered prompt; embeddings fall back to
    /// [`echo_embedding`].
    Echo,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FixtureMatch {
    Exact(String),
    Contains(Vec<String>),
    Any,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatFixture {
    pub template_id: TemplateId,
    pub matcher: FixtureMatch,
    pub response_text: String,
}

/// Read-only after construction; every response is a pure function of the
/// request.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    exact: HashMap<(TemplateId, String), String>,
    rules: Vec<(TemplateId, Vec<String>, String)>,
    defaults: HashMap<TemplateId, String>,
    embeddings: HashMap<String, Vec<f64>>,
    fallback: Fallback,
    echo_dim: Option<usize>,
    latency: Duration,
}

pub const DEFAULT_ECHO_DIM: usize = 32;

/// Feature-hashed bag-of-words vector. Each token (lower-cased alphanumeric
/// run, or single CJK character) adds ±1 to one of `dim - 1` buckets chosen
/// by its SHA-256 digest; component 0 is a constant 0.5 so the vector is
/// never zero.
pub fn echo_embedding(text: &str, dim: usize) -> Vec<f64> {
    let dim = dim.max(2);
    let mut v = vec![0.0; dim];
    v[0] = 0.5;
    let lower = text.to_lowercase();
    let mut tokens: Vec<String> = Vec::new();
    let mut cur = String::new();
    for c in lower.chars() {
        if is_cjk(c) {
            if !cur.is_empty() {
                tokens.push(std::mem::take(&mut cur));
            }
            tokens.push(c.to_string());
        } else if c.is_alphanumeric() {
            cur.push(c);
        } else if !cur.is_empty() {
            tokens.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    for t in tokens {
        let d = Sha256::digest(t.as_bytes());
        let bucket = u64::from_le_bytes(d[..8].try_into().unwrap()) % (dim as u64 - 1);
        let sign = if d[8] & 1 == 0 { 1.0 } else { -1.0 };
        v[1 + bucket as usize] += sign;
    }
    v
}

impl ScriptedBackend {
    pub fn new(fallback: Fallback) -> Self {
        ScriptedBackend {
            fallback,
            ..Default::default()
        }
    }

    pub fn from_fixtures(file: &FixtureFile) -> Self {
        let mut b = ScriptedBackend::new(file.fallback.unwrap_or_default());
        b.echo_dim = file.echo_dim;
        b.latency = Duration::from_millis(file.simulated_latency_ms.unwrap_or(0));
        for f in &file.chat {
            b.add_fixture(f.clone());
        }
        for (text, v) in &file.embeddings {
            b.add_embedding(text, v.clone());
        }
        b
    }

    pub fn add_fixture(&mut self, f: ChatFixture) {
        match f.matcher {
            FixtureMatch::Exact(h) => {
                self.exact.insert((f.template_id, h), f.response_text);
            }
            FixtureMatch::Contains(needles) => self.rules.push((f.template_id, needles, f.response_text)),
            FixtureMatch::Any => {
                self.defaults.insert(f.template_id, f.response_text);
            }
        }
    }

    /// Exact fixture for the given variables.
    pub fn add_chat(&mut self, template_id: TemplateId, vars: &BTreeMap<String, String>, response: &str) {
        self.exact
            .insert((template_id, canonical_hash(vars)), response.to_string());
    }

    pub fn add_rule(&mut self, template_id: TemplateId, needles: &[&str], response: &str) {
        self.rules.push((
            template_id,
            needles.iter().map(|s| s.to_string()).collect(),
            response.to_string(),
        ));
    }

    pub fn add_default(&mut self, template_id: TemplateId, response: &str) {
        self.defaults.insert(template_id, response.to_string());
    }

    pub fn add_embedding(&mut self, text: &str, vector: Vec<f64>) {
        self.embeddings.insert(text.to_string(), vector);
    }

    pub fn set_echo_dim(&mut self, dim: usize) {
        self.echo_dim = Some(dim);
    }

    pub fn set_latency(&mut self, latency: Duration) {
        self.latency = latency;
    }

    fn echo_dim(&self) -> usize {
        self.echo_dim
            .or_else(|| self.embeddings.values().next().map(Vec::len))
            .unwrap_or(DEFAULT_ECHO_DIM)
    }

    fn lookup(&self, call: &ChatCall<'_>) -> Option<&str> {
        if let Some(r) = self.exact.get(&(call.template_id, call.request_hash.to_string())) {
            return Some(r);
        }
        self.rules
            .iter()
            .find(|(t, needles, _)| *t == call.template_id && needles.iter().all(|n| call.prompt.contains(n.as_str())))
            .map(|(_, _, r)| r.as_str())
            .or_else(|| self.defaults.get(&call.template_id).map(String::as_str))
    }
}

impl ChatBackend for ScriptedBackend {
    fn chat(&self, call: &ChatCall<'_>) -> Result<ChatReply, BackendError> {
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let text = match (self.lookup(call), self.fallback) {
            (Some(r), _) => r.to_string(),
            (None, Fallback::Echo) => call.prompt.to_string(),
            (None, Fallback::Error) => return Err(BackendError::FixtureMiss),
        };
        Ok(ChatReply { text, usage: None })
    }
}

impl EmbedBackend for ScriptedBackend {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let dim = self.echo_dim();
        texts
            .iter()
            .map(|t| match (self.embeddings.get(t), self.fallback) {
                (Some(v), _) => Ok(v.clone()),
                (None, Fallback::Echo) => Ok(echo_embedding(t, dim)),
                (None, Fallback::Error) => Err(BackendError::EmbedFixtureMiss(t.clone())),
            })
            .collect()
    }
}
