//! Uniform access to chat-completion and embedding backends.
//!
//! Every pipeline call goes through [`Gateway::complete`] or
//! [`Gateway::embed`], which render the prompt, dispatch to the backend bound
//! to the logical role, retry transient failures and append exactly one
//! trace event per call.

mod live;
mod scripted;
mod template;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::trace::{EventKind, Tracer};

pub use live::{BackendsConfig, EndpointConfig, OpenAiCompatible};
pub(crate) use live::{http_agent, post_json};
pub use scripted::{echo_embedding, ChatFixture, Fallback, FixtureMatch, ScriptedBackend};
pub use template::{PromptTemplate, TemplateId, TemplateRegistry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("{template_id}: missing variables {names:?}")]
    MissingVars {
        template_id: TemplateId,
        names: Vec<String>,
    },
    #[error("{template_id}: unexpected variables {names:?}")]
    ExtraVars {
        template_id: TemplateId,
        names: Vec<String>,
    },
    #[error("no backend bound for role {0}")]
    Unbound(RoleModel),
    #[error("fixture miss for {template_id} request {request_hash}")]
    FixtureMiss {
        template_id: TemplateId,
        request_hash: String,
    },
    #[error("no embedding fixture for text {0:?}")]
    EmbedFixtureMiss(String),
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint error: {0}")]
    Endpoint(String),
    #[error("embedding configuration error: {0}")]
    Embedding(String),
    #[error("empty input text at index {0}")]
    EmptyText(usize),
}

/// Logical model roles; each is bound to one backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleModel {
    PlannerModel,
    SolverModel,
    MemoryModel,
    ForensicModel,
    MedicalToolModel,
}

impl RoleModel {
    pub const ALL: [RoleModel; 5] = [
        RoleModel::PlannerModel,
        RoleModel::SolverModel,
        RoleModel::MemoryModel,
        RoleModel::ForensicModel,
        RoleModel::MedicalToolModel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RoleModel::PlannerModel => "planner_model",
            RoleModel::SolverModel => "solver_model",
            RoleModel::MemoryModel => "memory_model",
            RoleModel::ForensicModel => "forensic_model",
            RoleModel::MedicalToolModel => "medical_tool_model",
        }
    }

    /// Upper-case key used in `FEAT_<ROLE>_*` environment overrides.
    pub fn env_key(self) -> &'static str {
        match self {
            RoleModel::PlannerModel => "PLANNER",
            RoleModel::SolverModel => "SOLVER",
            RoleModel::MemoryModel => "MEMORY",
            RoleModel::ForensicModel => "FORENSIC",
            RoleModel::MedicalToolModel => "MEDICAL_TOOL",
        }
    }
}

impl fmt::Display for RoleModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Canonical hash of a variable map: entries in name order, each written as
/// `name 0x1F value 0x1E`, hashed with SHA-256, lower-case hex.
pub fn canonical_hash(vars: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (k, v) in vars {
        h.update(k.as_bytes());
        h.update([0x1f]);
        h.update(v.as_bytes());
        h.update([0x1e]);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role_model: RoleModel,
    pub template_id: TemplateId,
    pub variables: BTreeMap<String, String>,
    pub temperature: f64,
    pub max_attempts: u32,
}

impl ChatRequest {
    /// Temperature 0 and three attempts, as used by every pipeline call.
    pub fn new(role_model: RoleModel, template_id: TemplateId) -> Self {
        ChatRequest {
            role_model,
            template_id,
            variables: BTreeMap::new(),
            temperature: 0.0,
            max_attempts: 3,
        }
    }

    pub fn var(mut self, name: &str, value: impl Into<String>) -> Self {
        self.variables.insert(name.to_string(), value.into());
        self
    }
}

/// What a backend sees for one chat call.
#[derive(Debug, Clone)]
pub struct ChatCall<'a> {
    pub role: RoleModel,
    pub template_id: TemplateId,
    pub request_hash: &'a str,
    pub prompt: &'a str,
    pub temperature: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub text: String,
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Option<Usage>,
    pub request_hash: String,
    pub latency_ms: u64,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("retryable: {0}")]
    Retryable(String),
    #[error("{0}")]
    Fatal(String),
    #[error("fixture miss")]
    FixtureMiss,
    #[error("no embedding fixture for {0:?}")]
    EmbedFixtureMiss(String),
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, call: &ChatCall<'_>) -> Result<ChatReply, BackendError>;
}

pub trait EmbedBackend: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
}

/// A finite, non-zero real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, GatewayError> {
        if values.is_empty() {
            return Err(GatewayError::Embedding("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GatewayError::Embedding("non-finite component".into()));
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(GatewayError::Embedding("zero-norm vector".into()));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Result<Self, GatewayError> {
        EmbeddingVector::new(self.values.iter().map(|v| v * c).collect())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = GatewayError;

    fn try_from(values: Vec<f64>) -> Result<Self, GatewayError> {
        EmbeddingVector::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Vec<f64> {
        v.values
    }
}

/// Outcome tag recorded on model-call trace events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallOutcome {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base_delay_ms: 250,
            max_delay_ms: 4_000,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            base_delay_ms: 0,
            max_delay_ms: 0,
            jitter: false,
        }
    }

    /// Delay before retry number `attempt` (1-based): exponential with an
    /// optional jitter factor drawn from [0.5, 1.0].
    pub fn delay(&self, attempt: u32) -> Duration {
        let exp = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.saturating_sub(1).min(16))
            .min(self.max_delay_ms);
        let ms = if self.jitter && exp > 0 {
            (exp as f64 * rand::rng().random_range(0.5..=1.0)) as u64
        } else {
            exp
        };
        Duration::from_millis(ms)
    }
}

pub struct Gateway {
    templates: TemplateRegistry,
    chat: BTreeMap<RoleModel, Arc<dyn ChatBackend>>,
    embedder: Option<Arc<dyn EmbedBackend>>,
    retry: RetryPolicy,
    dim: OnceLock<usize>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("roles", &self.chat.keys().collect::<Vec<_>>())
            .field("embedder", &self.embedder.is_some())
            .field("retry", &self.retry)
            .finish()
    }
}

impl Gateway {
    pub fn new(templates: TemplateRegistry) -> Self {
        Gateway {
            templates,
            chat: BTreeMap::new(),
            embedder: None,
            retry: RetryPolicy::default(),
            dim: OnceLock::new(),
        }
    }

    /// Binds one scripted backend to every role and to embeddings.
    pub fn scripted(backend: ScriptedBackend) -> Self {
        let backend = Arc::new(backend);
        let mut gw = Gateway::new(TemplateRegistry::default()).with_retry(RetryPolicy::none());
        for role in RoleModel::ALL {
            gw = gw.bind(role, backend.clone());
        }
        gw.with_embedder(backend)
    }

    pub fn bind(mut self, role: RoleModel, backend: Arc<dyn ChatBackend>) -> Self {
        self.chat.insert(role, backend);
        self
    }

    pub fn with_embedder(mut self, backend: Arc<dyn EmbedBackend>) -> Self {
        self.embedder = Some(backend);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn templates(&self) -> &TemplateRegistry {
        &self.templates
    }

    pub fn has_embedder(&self) -> bool {
        self.embedder.is_some()
    }

    pub fn render(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        self.templates.render(req.template_id, &req.variables)
    }

    pub fn complete(&self, req: &ChatRequest, tracer: &Tracer) -> Result<ChatResponse, GatewayError> {
        let prompt = self.render(req)?;
        let request_hash = canonical_hash(&req.variables);
        let backend = self
            .chat
            .get(&req.role_model)
            .ok_or(GatewayError::Unbound(req.role_model))?;
        let call = ChatCall {
            role: req.role_model,
            template_id: req.template_id,
            request_hash: &request_hash,
            prompt: &prompt,
            temperature: req.temperature,
        };
        let max_attempts = req.max_attempts.max(1);
        let started = tracer.now_ms();
        let mut attempts = 0;
        let result = loop {
            attempts += 1;
            match backend.chat(&call) {
                Ok(reply) => break Ok(reply),
                Err(BackendError::Retryable(msg)) if attempts < max_attempts => {
                    tracing::debug!(%msg, attempts, "retrying chat call");
                    std::thread::sleep(self.retry.delay(attempts));
                }
                Err(BackendError::Retryable(message)) => {
                    break Err(GatewayError::Transport { attempts, message })
                }
                Err(BackendError::FixtureMiss) => {
                    break Err(GatewayError::FixtureMiss {
                        template_id: req.template_id,
                        request_hash: request_hash.clone(),
                    })
                }
                Err(BackendError::EmbedFixtureMiss(t)) => break Err(GatewayError::EmbedFixtureMiss(t)),
                Err(BackendError::Fatal(m)) => break Err(GatewayError::Endpoint(m)),
            }
        };
        let latency_ms = tracer.now_ms().saturating_sub(started);
        tracer.emit(EventKind::ModelCall {
            role: req.role_model,
            template_id: req.template_id,
            request_hash: request_hash.clone(),
            latency_ms,
            attempts,
            outcome: if result.is_ok() {
                CallOutcome::Ok
            } else {
                CallOutcome::Failed
            },
        });
        let reply = result?;
        Ok(ChatResponse {
            text: reply.text,
            usage: reply.usage,
            request_hash,
            latency_ms,
            attempts,
        })
    }

    pub fn embed(&self, texts: &[String], tracer: &Tracer) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let started = tracer.now_ms();
        let mut attempts = 0;
        let result = self.embed_inner(texts, &mut attempts);
        tracer.emit(EventKind::EmbedCall {
            texts: texts.len(),
            latency_ms: tracer.now_ms().saturating_sub(started),
            attempts,
            outcome: if result.is_ok() {
                CallOutcome::Ok
            } else {
                CallOutcome::Failed
            },
        });
        result
    }

    fn embed_inner(&self, texts: &[String], attempts: &mut u32) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::Embedding("empty batch".into()));
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(GatewayError::EmptyText(i));
        }
        let backend = self
            .embedder
            .as_ref()
            .ok_or_else(|| GatewayError::Embedding("no embedding backend bound".into()))?;
        let raw = loop {
            *attempts += 1;
            match backend.embed(texts) {
                Ok(v) => break v,
                Err(BackendError::Retryable(msg)) if *attempts < 3 => {
                    tracing::debug!(%msg, "retrying embed call");
                    std::thread::sleep(self.retry.delay(*attempts));
                }
                Err(BackendError::Retryable(message)) => {
                    return Err(GatewayError::Transport {
                        attempts: *attempts,
                        message,
                    })
                }
                Err(BackendError::EmbedFixtureMiss(t)) => return Err(GatewayError::EmbedFixtureMiss(t)),
                Err(e) => return Err(GatewayError::Endpoint(e.to_string())),
            }
        };
        if raw.len() != texts.len() {
            return Err(GatewayError::Embedding(format!(
                "{} vectors for {} texts",
                raw.len(),
                texts.len()
            )));
        }
        let vectors = raw
            .into_iter()
            .map(EmbeddingVector::new)
            .collect::<Result<Vec<_>, _>>()?;
        let dim = *self.dim.get_or_init(|| vectors[0].dim());
        if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
            return Err(GatewayError::Embedding(format!(
                "dimension mismatch: expected {dim}, got {}",
                v.dim()
            )));
        }
        Ok(vectors)
    }
}
