//! Declarative tool registry for the ReAct loop.
//!
//! | tool | parameters | result |
//! |---|---|---|
//! | `web_search` | `query` | top results with title, URL and snippet |
//! | `kb_lookup` | `query` | the 2 highest-cosine knowledge-base passages |
//! | `pubmed_search` | `query` | 3 article records (id, title, abstract snippet) |
//! | `medical_llm` | `question` | medical-model answer |
//!
//! `kb_lookup` always runs locally against the knowledge-base index. The other
//! tools use recorded fixtures offline, or the configured providers live.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::fixtures::ToolFixture;
use crate::gateway::{canonical_hash, http_agent, post_json, ChatRequest, FixtureMatch, Gateway, RoleModel, TemplateId};
use crate::index::VectorIndex;
use crate::trace::Tracer;

pub const KB_TOP_K: usize = 2;
pub const PUBMED_NUM: usize = 3;
pub const WEB_RESULTS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToolError {
    #[error("unknown tool {0:?}")]
    Unknown(String),
    #[error("invalid arguments for {tool}: {message}")]
    Args { tool: String, message: String },
    #[error("no fixture for {tool} with args hash {args_hash}")]
    FixtureMiss { tool: String, args_hash: String },
    #[error("{tool} failed: {message}")]
    Failed { tool: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    /// All parameters are required strings.
    pub params: Vec<ParamSpec>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ToolOutput {
    pub text: String,
    pub citations: Vec<String>,
}

pub struct ToolContext<'a> {
    pub gateway: &'a Gateway,
    pub tracer: &'a Tracer,
    pub task_instruction: &'a str,
    pub thought: &'a str,
}

pub trait ToolHandler: Send + Sync {
    fn call(&self, ctx: &ToolContext<'_>, args: &BTreeMap<String, String>) -> Result<ToolOutput, ToolError>;
}

/// Recorded tool results for offline runs.
#[derive(Debug, Clone, Default)]
pub struct ToolFixtures {
    fixtures: Vec<ToolFixture>,
}

impl ToolFixtures {
    pub fn new(fixtures: Vec<ToolFixture>) -> Self {
        ToolFixtures { fixtures }
    }

    /// Exact args hash, then `contains` rules over the JSON-encoded
    /// arguments, then `"*"`.
    pub fn lookup(&self, tool: &str, args: &BTreeMap<String, String>) -> Result<&str, ToolError> {
        let hash = canonical_hash(args);
        let encoded = serde_json::to_string(args).unwrap();
        let of_tool = || self.fixtures.iter().filter(|f| f.tool_name == tool);
        of_tool()
            .find(|f| f.matcher == FixtureMatch::Exact(hash.clone()))
            .or_else(|| {
                of_tool().find(|f| matches!(&f.matcher, FixtureMatch::Contains(n) if n.iter().all(|s| encoded.contains(s.as_str()))))
            })
            .or_else(|| of_tool().find(|f| f.matcher == FixtureMatch::Any))
            .map(|f| f.result_text.as_str())
            .ok_or(ToolError::FixtureMiss {
                tool: tool.to_string(),
                args_hash: hash,
            })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveToolConfig {
    #[serde(default = "default_tavily")]
    pub web_search_url: String,
    #[serde(default, skip_serializing)]
    pub web_search_key: Option<String>,
    #[serde(default = "default_eutils")]
    pub pubmed_url: String,
    #[serde(default, skip_serializing)]
    pub pubmed_key: Option<String>,
}

fn default_tavily() -> String {
    "https://api.tavily.com/search".into()
}

fn default_eutils() -> String {
    "https://eutils.ncbi.nlm.nih.gov/entrez/eutils".into()
}

impl LiveToolConfig {
    pub fn with_env(mut self, env: &dyn Fn(&str) -> Option<String>) -> Self {
        if let Some(v) = env("FEAT_WEB_SEARCH_URL") {
            self.web_search_url = v;
        }
        if self.web_search_url.is_empty() {
            self.web_search_url = default_tavily();
        }
        self.web_search_key = env("FEAT_WEB_SEARCH_KEY").or(self.web_search_key);
        if let Some(v) = env("FEAT_PUBMED_URL") {
            self.pubmed_url = v;
        }
        if self.pubmed_url.is_empty() {
            self.pubmed_url = default_eutils();
        }
        self.pubmed_key = env("FEAT_PUBMED_KEY").or(self.pubmed_key);
        self
    }
}

#[derive(Debug, Clone)]
pub enum ToolSource {
    Offline(Arc<ToolFixtures>),
    Live(LiveToolConfig),
}

#[derive(Debug, Clone, Deserialize)]
struct WebRecord {
    title: String,
    url: String,
    #[serde(alias = "content")]
    snippet: String,
}

#[derive(Debug, Clone, Deserialize)]
struct ArticleRecord {
    id: String,
    title: String,
    #[serde(alias = "abstract_snippet")]
    r#abstract: String,
}

fn format_web(records: &[WebRecord]) -> ToolOutput {
    let text = records
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{}. {}\n   {}\n   {}", i + 1, r.title, r.url, r.snippet))
        .collect::<Vec<_>>()
        .join("\n");
    ToolOutput {
        text,
        citations: records.iter().map(|r| r.url.clone()).collect(),
    }
}

fn format_articles(records: &[ArticleRecord]) -> ToolOutput {
    let text = records
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{}. [PMID {}] {}\n   {}", i + 1, r.id, r.title, r.r#abstract))
        .collect::<Vec<_>>()
        .join("\n");
    ToolOutput {
        text,
        citations: records.iter().map(|r| format!("pmid:{}", r.id)).collect(),
    }
}

struct WebSearch(ToolSource);

impl ToolHandler for WebSearch {
    fn call(&self, _: &ToolContext<'_>, args: &BTreeMap<String, String>) -> Result<ToolOutput, ToolError> {
        let fail = |message: String| ToolError::Failed { tool: "web_search".into(), message };
        let records: Vec<WebRecord> = match &self.0 {
            ToolSource::Offline(f) => {
                let raw = f.lookup("web_search", args)?;
                match serde_json::from_str(raw) {
                    Ok(r) => r,
                    Err(_) => return Ok(ToolOutput { text: raw.to_string(), citations: vec![] }),
                }
            }
            ToolSource::Live(cfg) => {
                let body = json!({
                    "api_key": cfg.web_search_key,
                    "query": args["query"],
                    "max_results": WEB_RESULTS,
                });
                let v = post_json(&http_agent(30), &cfg.web_search_url, cfg.web_search_key.as_deref(), &body)
                    .map_err(|e| fail(e.to_string()))?;
                serde_json::from_value(v["results"].clone()).map_err(|e| fail(e.to_string()))?
            }
        };
        Ok(format_web(&records[..records.len().min(WEB_RESULTS)]))
    }
}

struct PubmedSearch(ToolSource);

fn eutils_get(agent: &ureq::Agent, url: &str) -> Result<String, String> {
    let resp = agent.get(url).call().map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    let body = resp.into_body().read_to_string().map_err(|e| e.to_string())?;
    if (200..300).contains(&status) {
        Ok(body)
    } else {
        Err(format!("HTTP {status}"))
    }
}

fn query_escape(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => (b as char).to_string(),
            b' ' => "+".to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

impl PubmedSearch {
    fn live(cfg: &LiveToolConfig, query: &str) -> Result<Vec<ArticleRecord>, String> {
        let agent = http_agent(30);
        let key = cfg.pubmed_key.as_ref().map(|k| format!("&api_key={k}")).unwrap_or_default();
        let base = cfg.pubmed_url.trim_end_matches('/');
        let search = eutils_get(
            &agent,
            &format!("{base}/esearch.fcgi?db=pubmed&retmode=json&sort=relevance&retmax={PUBMED_NUM}&term={}{key}", query_escape(query)),
        )?;
        let v: Value = serde_json::from_str(&search).map_err(|e| e.to_string())?;
        let ids: Vec<String> = serde_json::from_value(v["esearchresult"]["idlist"].clone()).map_err(|e| e.to_string())?;
        if ids.is_empty() {
            return Ok(vec![]);
        }
        let summary = eutils_get(&agent, &format!("{base}/esummary.fcgi?db=pubmed&retmode=json&id={}{key}", ids.join(",")))?;
        let s: Value = serde_json::from_str(&summary).map_err(|e| e.to_string())?;
        ids.iter()
            .map(|id| {
                let abstract_text = eutils_get(
                    &agent,
                    &format!("{base}/efetch.fcgi?db=pubmed&rettype=abstract&retmode=text&id={id}{key}"),
                )?;
                Ok(ArticleRecord {
                    id: id.clone(),
                    title: s["result"][id]["title"].as_str().unwrap_or_default().to_string(),
                    r#abstract: abstract_text.split_whitespace().take(80).collect::<Vec<_>>().join(" "),
                })
            })
            .collect()
    }
}

impl ToolHandler for PubmedSearch {
    fn call(&self, _: &ToolContext<'_>, args: &BTreeMap<String, String>) -> Result<ToolOutput, ToolError> {
        let fail = |message: String| ToolError::Failed { tool: "pubmed_search".into(), message };
        let records = match &self.0 {
            ToolSource::Offline(f) => {
                serde_json::from_str::<Vec<ArticleRecord>>(f.lookup("pubmed_search", args)?).map_err(|e| fail(format!("fixture: {e}")))?
            }
            ToolSource::Live(cfg) => PubmedSearch::live(cfg, &args["query"]).map_err(fail)?,
        };
        Ok(format_articles(&records[..records.len().min(PUBMED_NUM)]))
    }
}

struct KbLookup(Arc<VectorIndex>);

impl ToolHandler for KbLookup {
    fn call(&self, ctx: &ToolContext<'_>, args: &BTreeMap<String, String>) -> Result<ToolOutput, ToolError> {
        let fail = |message: String| ToolError::Failed { tool: "kb_lookup".into(), message };
        if self.0.is_empty() {
            return Err(fail("knowledge base is empty".into()));
        }
        let q = ctx
            .gateway
            .embed(&[args["query"].clone()], ctx.tracer)
            .map_err(|e| fail(e.to_string()))?;
        let hits = self.0.top_k(&q[0], KB_TOP_K).map_err(|e| fail(e.to_string()))?;
        let mut out = ToolOutput::default();
        let mut lines = Vec::new();
        for h in hits {
            let id = format!("kb:{}#{}", h.doc_id, h.passage_id);
            let text = self.0.passage(&h.doc_id, &h.passage_id).map(|p| p.text.as_str()).unwrap_or("");
            lines.push(format!("[{id}] (score {:.4}) {text}", h.score));
            out.citations.push(id);
        }
        out.text = lines.join("\n");
        Ok(out)
    }
}

struct MedicalLlm(ToolSource);

impl ToolHandler for MedicalLlm {
    fn call(&self, ctx: &ToolContext<'_>, args: &BTreeMap<String, String>) -> Result<ToolOutput, ToolError> {
        let text = match &self.0 {
            ToolSource::Offline(f) => f.lookup("medical_llm", args)?.to_string(),
            ToolSource::Live(_) => {
                let req = ChatRequest::new(RoleModel::MedicalToolModel, TemplateId::Medical)
                    .var("question", format!("{}\n\nCurrent reasoning: {}", args["question"], ctx.thought))
                    .var("task_instruction", ctx.task_instruction);
                ctx.gateway
                    .complete(&req, ctx.tracer)
                    .map_err(|e| ToolError::Failed {
                        tool: "medical_llm".into(),
                        message: e.to_string(),
                    })?
                    .text
            }
        };
        Ok(ToolOutput { text, citations: vec![] })
    }
}

pub struct ToolRegistry {
    tools: Vec<(ToolSpec, Box<dyn ToolHandler>)>,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.tools.iter().map(|(s, _)| &s.name)).finish()
    }
}

fn spec(name: &str, description: &str, params: &[(&str, &str)]) -> ToolSpec {
    ToolSpec {
        name: name.into(),
        description: description.into(),
        params: params
            .iter()
            .map(|(n, d)| ParamSpec {
                name: n.to_string(),
                description: d.to_string(),
            })
            .collect(),
    }
}

impl ToolRegistry {
    pub fn empty() -> Self {
        ToolRegistry { tools: Vec::new() }
    }

    /// The four standard tools.
    pub fn standard(kb: Arc<VectorIndex>, source: ToolSource) -> Self {
        let mut r = ToolRegistry::empty();
        r.register(
            spec("web_search", "Search the web for recent or case-specific information.", &[("query", "search query")]),
            Box::new(WebSearch(source.clone())),
        );
        r.register(
            spec("kb_lookup", "Look up passages in forensic medicine textbooks.", &[("query", "what to look up")]),
            Box::new(KbLookup(kb)),
        );
        r.register(
            spec("pubmed_search", "Search peer-reviewed biomedical literature.", &[("query", "literature query")]),
            Box::new(PubmedSearch(source.clone())),
        );
        r.register(
            spec("medical_llm", "Ask a specialist medical model a clinical question.", &[("question", "the question")]),
            Box::new(MedicalLlm(source)),
        );
        r
    }

    pub fn register(&mut self, spec: ToolSpec, handler: Box<dyn ToolHandler>) {
        self.tools.retain(|(s, _)| s.name != spec.name);
        self.tools.push((spec, handler));
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.tools.iter().map(|(s, _)| s.name.as_str()).collect()
    }

    pub fn spec(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|(s, _)| s.name == name).map(|(s, _)| s)
    }

    /// Tool list as shown to the model.
    pub fn describe(&self) -> String {
        self.tools
            .iter()
            .map(|(s, _)| {
                let params = s.params.iter().map(|p| format!("\"{}\": {}", p.name, p.description)).collect::<Vec<_>>().join(", ");
                format!("- {}: {} Arguments: {{{params}}}", s.name, s.description)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Validates `args` against the declared parameters and runs the tool.
    pub fn call(&self, ctx: &ToolContext<'_>, name: &str, args: &Value) -> Result<ToolOutput, ToolError> {
        let (spec, handler) = self
            .tools
            .iter()
            .find(|(s, _)| s.name == name)
            .ok_or_else(|| ToolError::Unknown(name.to_string()))?;
        let bad = |message: String| ToolError::Args { tool: name.to_string(), message };
        let obj = args.as_object().ok_or_else(|| bad("arguments must be a JSON object".into()))?;
        let mut parsed = BTreeMap::new();
        for (k, v) in obj {
            if !spec.params.iter().any(|p| &p.name == k) {
                return Err(bad(format!("unexpected parameter {k:?}")));
            }
            let s = v.as_str().ok_or_else(|| bad(format!("parameter {k:?} must be a string")))?;
            if s.trim().is_empty() {
                return Err(bad(format!("parameter {k:?} is empty")));
            }
            parsed.insert(k.clone(), s.to_string());
        }
        if let Some(p) = spec.params.iter().find(|p| !parsed.contains_key(&p.name)) {
            return Err(bad(format!("missing parameter {:?}", p.name)));
        }
        handler.call(ctx, &parsed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Fallback, ScriptedBackend};
    use crate::trace::FixedClock;

    fn fixtures() -> Arc<ToolFixtures> {
        let articles = json!([
            {"id": "1", "title": "A", "abstract": "x"},
            {"id": "2", "title": "B", "abstract": "y"},
            {"id": "3", "title": "C", "abstract": "z"},
            {"id": "4", "title": "D", "abstract": "w"},
        ]);
        Arc::new(ToolFixtures::new(vec![
            ToolFixture {
                tool_name: "pubmed_search".into(),
                matcher: FixtureMatch::Contains(vec!["organophosphate".into()]),
                result_text: articles.to_string(),
            },
            ToolFixture {
                tool_name: "medical_llm".into(),
                matcher: FixtureMatch::Any,
                result_text: "answer".into(),
            },
        ]))
    }

    fn run(reg: &ToolRegistry, name: &str, args: Value) -> Result<ToolOutput, ToolError> {
        let gw = Gateway::scripted(ScriptedBackend::new(Fallback::Error));
        let tracer = Tracer::new(Arc::new(FixedClock(0)));
        let ctx = ToolContext { gateway: &gw, tracer: &tracer, task_instruction: "t", thought: "th" };
        reg.call(&ctx, name, &args)
    }

    #[test]
    fn pubmed_returns_three_records() {
        let reg = ToolRegistry::standard(Arc::new(VectorIndex::empty(crate::index::Granularity::Paragraph)), ToolSource::Offline(fixtures()));
        let out = run(&reg, "pubmed_search", json!({"query": "organophosphate poisoning"})).unwrap();
        assert_eq!(out.citations, vec!["pmid:1", "pmid:2", "pmid:3"]);
    }

    #[test]
    fn offline_miss_and_schema_errors() {
        let reg = ToolRegistry::standard(Arc::new(VectorIndex::empty(crate::index::Granularity::Paragraph)), ToolSource::Offline(fixtures()));
        assert!(matches!(run(&reg, "web_search", json!({"query": "q"})), Err(ToolError::FixtureMiss { .. })));
        assert_eq!(run(&reg, "nope", json!({})), Err(ToolError::Unknown("nope".into())));
        assert!(matches!(run(&reg, "web_search", json!({})), Err(ToolError::Args { .. })));
        assert!(matches!(run(&reg, "web_search", json!({"query": "q", "x": "y"})), Err(ToolError::Args { .. })));
        assert!(matches!(run(&reg, "web_search", json!("q")), Err(ToolError::Args { .. })));
        assert_eq!(run(&reg, "medical_llm", json!({"question": "q"})).unwrap().text, "answer");
    }

    #[test]
    fn query_escaping() {
        assert_eq!(query_escape("a b&c"), "a+b%26c");
    }
}
