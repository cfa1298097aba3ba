//! OpenAI-compatible HTTP backend (`/chat/completions`, `/embeddings`).

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatCall, ChatReply, EmbedBackend, RoleModel, Usage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// Base URL, e.g. `https://api.example.com/v1`.
    pub url: String,
    pub model: String,
    #[serde(default, skip_serializing)]
    pub key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

impl EndpointConfig {
    /// Applies `FEAT_<PREFIX>_URL`, `_KEY` and `_MODEL` on top of `base`.
    /// Returns `None` when neither the base nor the environment gives both a
    /// URL and a model.
    pub fn with_env(base: Option<EndpointConfig>, prefix: &str, env: &dyn Fn(&str) -> Option<String>) -> Option<Self> {
        let var = |suffix: &str| env(&format!("FEAT_{prefix}_{suffix}")).filter(|v| !v.is_empty());
        let url = var("URL").or_else(|| base.as_ref().map(|b| b.url.clone()))?;
        let model = var("MODEL").or_else(|| base.as_ref().map(|b| b.model.clone()))?;
        Some(EndpointConfig {
            url,
            model,
            key: var("KEY").or_else(|| base.as_ref().and_then(|b| b.key.clone())),
            timeout_secs: base.map(|b| b.timeout_secs).unwrap_or_else(default_timeout),
        })
    }
}

/// Endpoint bindings as read from the `[backends]` section of a config file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsConfig {
    #[serde(default)]
    pub roles: BTreeMap<RoleModel, EndpointConfig>,
    #[serde(default)]
    pub embedding: Option<EndpointConfig>,
}

impl BackendsConfig {
    pub fn resolve_env(mut self, env: &dyn Fn(&str) -> Option<String>) -> Self {
        for role in RoleModel::ALL {
            let base = self.roles.remove(&role);
            if let Some(cfg) = EndpointConfig::with_env(base, role.env_key(), env) {
                self.roles.insert(role, cfg);
            }
        }
        self.embedding = EndpointConfig::with_env(self.embedding.take(), "EMBEDDING", env);
        self
    }
}

pub struct OpenAiCompatible {
    config: EndpointConfig,
    agent: ureq::Agent,
}

impl std::fmt::Debug for OpenAiCompatible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiCompatible").field("config", &self.config).finish()
    }
}

pub(crate) fn http_agent(timeout_secs: u64) -> ureq::Agent {
    let config = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(timeout_secs)))
        .build();
    ureq::Agent::new_with_config(config)
}

/// POSTs a JSON body and classifies failures: transport errors, 429 and 5xx
/// are retryable; other non-2xx statuses are fatal.
pub(crate) fn post_json(agent: &ureq::Agent, url: &str, key: Option<&str>, body: &Value) -> Result<Value, BackendError> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(k) = key {
        req = req.header("Authorization", &format!("Bearer {k}"));
    }
    let resp = req
        .send(body.to_string())
        .map_err(|e| BackendError::Retryable(e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp
        .into_body()
        .read_to_string()
        .map_err(|e| BackendError::Retryable(e.to_string()))?;
    match status {
        200..=299 => serde_json::from_str(&text).map_err(|e| BackendError::Fatal(format!("malformed response: {e}"))),
        429 | 500..=599 => Err(BackendError::Retryable(format!("HTTP {status}"))),
        _ => Err(BackendError::Fatal(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()))),
    }
}

impl OpenAiCompatible {
    pub fn new(config: EndpointConfig) -> Self {
        let agent = http_agent(config.timeout_secs);
        OpenAiCompatible { config, agent }
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{path}", self.config.url.trim_end_matches('/'))
    }
}

impl ChatBackend for OpenAiCompatible {
    fn chat(&self, call: &ChatCall<'_>) -> Result<ChatReply, BackendError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": call.prompt}],
            "temperature": call.temperature,
        });
        let v = post_json(&self.agent, &self.endpoint("chat/completions"), self.config.key.as_deref(), &body)?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::Fatal("response lacks choices[0].message.content".into()))?
            .to_string();
        let usage = v.get("usage").and_then(|u| {
            Some(Usage {
                prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
                completion_tokens: u.get("completion_tokens")?.as_u64()?,
            })
        });
        Ok(ChatReply { text, usage })
    }
}

impl EmbedBackend for OpenAiCompatible {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let body = json!({"model": self.config.model, "input": texts});
        let v = post_json(&self.agent, &self.endpoint("embeddings"), self.config.key.as_deref(), &body)?;
        let data = v["data"]
            .as_array()
            .ok_or_else(|| BackendError::Fatal("response lacks data array".into()))?;
        let mut rows: Vec<(u64, Vec<f64>)> = data
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let index = item.get("index").and_then(Value::as_u64).unwrap_or(i as u64);
                let vector = serde_json::from_value(item["embedding"].clone())
                    .map_err(|e| BackendError::Fatal(format!("embedding {i}: {e}")))?;
                Ok((index, vector))
            })
            .collect::<Result<_, BackendError>>()?;
        rows.sort_by_key(|(i, _)| *i);
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }
}
