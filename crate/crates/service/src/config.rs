//! Service configuration: a TOML file plus `FEAT_*` environment overrides.
//!
//! ```toml
//! data_dir = "data"
//! workers = 4
//! fixtures = "scenario.ndjson"   # offline mode: scripted backends and tools
//! kb_files = ["kb/toxicology.txt"]
//! corpus = "corpus.ndjson"
//!
//! [pipeline]
//! headless = true
//!
//! [backends.roles.forensic_model]
//! url = "https://api.example.com/v1"
//! model = "forensic-7b"
//! ```
//!
//! Relative paths resolve against the directory holding the file.

use std::path::{Path, PathBuf};

use feat_core::gateway::BackendsConfig;
use feat_core::index::Granularity;
use feat_core::pipeline::PipelineConfig;
use feat_core::solver::LiveToolConfig;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const DEFAULT_WORKERS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub workers: usize,
    /// Offline fixture file. When set, every role, the embedder and the
    /// external tools are served from it.
    pub fixtures: Option<PathBuf>,
    /// Overrides the fixture file's simulated latency.
    pub simulated_latency_ms: Option<u64>,
    pub templates_dir: Option<PathBuf>,
    /// Prebuilt knowledge-base index (`feat index-kb`).
    pub kb_index: Option<PathBuf>,
    /// Plain-text reference files indexed at startup when `kb_index` is unset.
    pub kb_files: Vec<PathBuf>,
    pub kb_granularity: Granularity,
    /// Exemplar corpus, newline-delimited.
    pub corpus: Option<PathBuf>,
    /// Prebuilt corpus index (`feat index-corpus`); built at startup if unset.
    pub corpus_index: Option<PathBuf>,
    /// Pins every event timestamp, for reproducible logs.
    pub fixed_clock_ms: Option<u64>,
    #[serde(skip_serializing)]
    pub api_token: Option<String>,
    pub pipeline: PipelineConfig,
    pub backends: BackendsConfig,
    pub tools: LiveToolConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            data_dir: PathBuf::from("data"),
            workers: DEFAULT_WORKERS,
            fixtures: None,
            simulated_latency_ms: None,
            templates_dir: None,
            kb_index: None,
            kb_files: Vec::new(),
            kb_granularity: Granularity::Sentence,
            corpus: None,
            corpus_index: None,
            fixed_clock_ms: None,
            api_token: None,
            pipeline: PipelineConfig::default(),
            backends: BackendsConfig::default(),
            tools: LiveToolConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, ServiceError> {
        let mut cfg: ServiceConfig = toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        cfg.rebase(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        ServiceConfig::parse(&text, base)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        for p in [
            &mut self.fixtures,
            &mut self.templates_dir,
            &mut self.kb_index,
            &mut self.corpus,
            &mut self.corpus_index,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self.kb_files.iter_mut().for_each(fix);
    }

    /// `FEAT_DATA_DIR`, `FEAT_FIXTURES`, `FEAT_SIMULATED_LATENCY_MS`,
    /// `FEAT_API_TOKEN`, the per-role endpoint variables and the tool
    /// variables.
    pub fn with_env(mut self, env: &dyn Fn(&str) -> Option<String>) -> Result<Self, ServiceError> {
        let var = |k: &str| env(k).filter(|v| !v.is_empty());
        if let Some(v) = var("FEAT_DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = var("FEAT_FIXTURES") {
            self.fixtures = Some(v.into());
        }
        if let Some(v) = var("FEAT_SIMULATED_LATENCY_MS") {
            let ms = v
                .parse()
                .map_err(|_| ServiceError::Config(format!("FEAT_SIMULATED_LATENCY_MS: not an integer: {v}")))?;
            self.simulated_latency_ms = Some(ms);
        }
        if let Some(v) = var("FEAT_API_TOKEN") {
            self.api_token = Some(v);
        }
        self.backends = self.backends.resolve_env(env);
        self.tools = self.tools.with_env(env);
        if self.workers == 0 {
            return Err(ServiceError::Config("workers must be at least 1".into()));
        }
        Ok(self)
    }

    pub fn from_process_env(self) -> Result<Self, ServiceError> {
        self.with_env(&|k| std::env::var(k).ok())
    }
}
