//! Builds the shared [`Engine`] from a [`ServiceConfig`].

use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use feat_core::case::{parse_exemplar_corpus, ExemplarDocument};
use feat_core::fixtures::FixtureFile;
use feat_core::gateway::{Gateway, OpenAiCompatible, RoleModel, ScriptedBackend, TemplateRegistry};
use feat_core::index::{Granularity, VectorIndex};
use feat_core::pipeline::Engine;
use feat_core::solver::{ToolFixtures, ToolRegistry, ToolSource};
use feat_core::trace::{SystemClock, Tracer};

use crate::{ServiceConfig, ServiceError};

fn startup<'a>(what: &str, path: &'a Path) -> impl Fn(String) -> ServiceError + 'a {
    let what = what.to_string();
    move |e| ServiceError::Startup(format!("{what} {}: {e}", path.display()))
}

/// The gateway and the tool source for the configured mode.
pub fn gateway(cfg: &ServiceConfig) -> Result<(Gateway, ToolSource), ServiceError> {
    let templates = match &cfg.templates_dir {
        Some(dir) => TemplateRegistry::with_overrides(dir).map_err(|e| startup("templates", dir)(e.to_string()))?,
        None => TemplateRegistry::default(),
    };
    if let Some(path) = &cfg.fixtures {
        let file = FixtureFile::load(path).map_err(|e| startup("fixtures", path)(e.to_string()))?;
        let mut backend = ScriptedBackend::from_fixtures(&file);
        if let Some(ms) = cfg.simulated_latency_ms {
            backend.set_latency(std::time::Duration::from_millis(ms));
        }
        let backend = Arc::new(backend);
        let mut gw = Gateway::new(templates).with_retry(feat_core::gateway::RetryPolicy::none());
        for role in RoleModel::ALL {
            gw = gw.bind(role, backend.clone());
        }
        let tools = ToolSource::Offline(Arc::new(ToolFixtures::new(file.tools)));
        return Ok((gw.with_embedder(backend), tools));
    }
    let mut gw = Gateway::new(templates);
    for (role, endpoint) in &cfg.backends.roles {
        gw = gw.bind(*role, Arc::new(OpenAiCompatible::new(endpoint.clone())));
    }
    for role in RoleModel::ALL {
        if !cfg.backends.roles.contains_key(&role) {
            tracing::warn!(role = role.as_str(), "no backend bound; calls for this role will fail");
        }
    }
    if let Some(endpoint) = &cfg.backends.embedding {
        gw = gw.with_embedder(Arc::new(OpenAiCompatible::new(endpoint.clone())));
    }
    Ok((gw, ToolSource::Live(cfg.tools.clone())))
}

pub fn load_index(path: &Path) -> Result<VectorIndex, ServiceError> {
    let f = std::fs::File::open(path).map_err(|e| startup("index", path)(e.to_string()))?;
    VectorIndex::read_from(BufReader::new(f)).map_err(|e| startup("index", path)(e.to_string()))
}

/// `(file stem, contents)` per reference file.
pub fn read_text_docs(paths: &[impl AsRef<Path>]) -> Result<Vec<(String, String)>, ServiceError> {
    paths
        .iter()
        .map(|p| {
            let p = p.as_ref();
            let text = std::fs::read_to_string(p).map_err(|e| startup("kb file", p)(e.to_string()))?;
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((stem, text))
        })
        .collect()
}

pub fn read_corpus(path: &Path) -> Result<Vec<ExemplarDocument>, ServiceError> {
    let bytes = std::fs::read(path).map_err(|e| startup("corpus", path)(e.to_string()))?;
    parse_exemplar_corpus(&bytes).map_err(|e| startup("corpus", path)(e.to_string()))
}

pub fn corpus_docs(corpus: &[ExemplarDocument]) -> Vec<(String, String)> {
    corpus.iter().map(|d| (d.doc_id.clone(), d.analysis_text.clone())).collect()
}

/// Gateway, tools, knowledge base and exemplar corpus. Indices not given
/// as files are embedded now; those embedding calls are not part of any
/// run's log.
pub fn build(cfg: &ServiceConfig) -> Result<Engine, ServiceError> {
    let (gateway, source) = gateway(cfg)?;
    let scratch = Tracer::new(Arc::new(SystemClock));
    let kb = match (&cfg.kb_index, cfg.kb_files.is_empty()) {
        (Some(path), _) => load_index(path)?,
        (None, false) => VectorIndex::build(&gateway, &scratch, &read_text_docs(&cfg.kb_files)?, cfg.kb_granularity)
            .map_err(|e| ServiceError::Startup(format!("knowledge base: {e}")))?,
        (None, true) => {
            tracing::warn!("no knowledge base configured; kb_lookup will fail");
            VectorIndex::empty(cfg.kb_granularity)
        }
    };
    let corpus = match &cfg.corpus {
        Some(path) => read_corpus(path)?,
        None => Vec::new(),
    };
    let corpus_index = match &cfg.corpus_index {
        Some(path) => load_index(path)?,
        None if corpus.is_empty() => VectorIndex::empty(Granularity::Document),
        None => VectorIndex::build(&gateway, &scratch, &corpus_docs(&corpus), Granularity::Document)
            .map_err(|e| ServiceError::Startup(format!("corpus index: {e}")))?,
    };
    let tools = ToolRegistry::standard(Arc::new(kb), source);
    Ok(Engine {
        gateway: Arc::new(gateway),
        tools: Arc::new(tools),
        corpus_index: Arc::new(corpus_index),
        corpus: Arc::new(corpus),
    })
}
