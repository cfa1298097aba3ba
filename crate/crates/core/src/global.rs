//! Global solver: exemplar retrieval, gap analysis, long-form composition,
//! critique-driven revision and the short-form conclusion.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::case::ExemplarDocument;
use crate::gateway::{ChatRequest, Gateway, GatewayError, RoleModel, TemplateId};
use crate::index::{ConsensusResult, VectorIndex};
use crate::memory::MemoryState;
use crate::solver::LocalResult;
use crate::text::{segment, SegmentPolicy};
use crate::trace::{EventKind, Tracer};

pub const PER_QUERY: usize = 2;
pub const FINAL_EXEMPLARS: usize = 4;
/// Shared word runs of this length between an exemplar and the analysis are
/// flagged.
pub const OVERLAP_WORDS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlobalError {
    #[error("no local results to compose from")]
    NoResults,
    #[error("composition returned empty output twice")]
    EmptyComposition,
    #[error("revision returned empty output")]
    EmptyRevision,
    #[error("critique targets version {target} but the current version is {current}")]
    StaleVersion { target: u32, current: u32 },
    #[error("critique text is empty")]
    EmptyCritique,
    #[error("no critiques supplied")]
    NoCritiques,
    #[error("draft version {0} is not approved")]
    NotApproved(u32),
    #[error("draft already approved")]
    AlreadyApproved,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarSet {
    pub docs: Vec<ExemplarDocument>,
    pub provenance: Option<ConsensusResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapQuery {
    pub q_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftAnalysis {
    pub version: u32,
    pub text: String,
    pub inputs_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Critique {
    pub critique_id: String,
    pub author: String,
    pub target_version: u32,
    pub text: String,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionRecord {
    pub version: u32,
    pub critique_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Approval {
    pub version: u32,
    pub reviewer: Option<String>,
    pub auto: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalReport {
    pub long_form: DraftAnalysis,
    pub short_form: String,
    pub revision_trail: Vec<RevisionRecord>,
    pub approved_by: Option<String>,
}

/// Query texts: every local-result sentence, then every memory entry.
pub fn exemplar_queries(results: &[LocalResult], memory: &MemoryState) -> Vec<String> {
    let mut q: Vec<String> = results
        .iter()
        .flat_map(|r| segment(&r.text, SegmentPolicy::Sentence))
        .collect();
    q.extend(memory.entries.iter().map(|e| e.text.clone()));
    q
}

/// Consensus retrieval over the corpus index. Any failure degrades to an
/// empty set with a warning; exemplars only shape style.
pub fn retrieve_exemplars(
    gateway: &Gateway,
    tracer: &Tracer,
    results: &[LocalResult],
    memory: &MemoryState,
    index: &VectorIndex,
    corpus: &[ExemplarDocument],
) -> ExemplarSet {
    let queries = exemplar_queries(results, memory);
    let empty = |tracer: &Tracer, message: String| {
        tracer.warn(message);
        tracer.emit(EventKind::ExemplarsRetrieved {
            queries: queries.len(),
            consensus: None,
            selected: vec![],
        });
        ExemplarSet {
            docs: vec![],
            provenance: None,
        }
    };
    if index.is_empty() {
        return empty(tracer, "exemplar corpus is empty; composing without exemplars".into());
    }
    if queries.is_empty() {
        return empty(tracer, "no exemplar queries; composing without exemplars".into());
    }
    let vectors = match gateway.embed(&queries, tracer) {
        Ok(v) => v,
        Err(e) => return empty(tracer, format!("exemplar query embedding failed: {e}")),
    };
    let consensus = match index.consensus_retrieve(&vectors, PER_QUERY, FINAL_EXEMPLARS) {
        Ok(c) => c,
        Err(e) => return empty(tracer, format!("exemplar retrieval failed: {e}")),
    };
    let docs = consensus
        .selected
        .iter()
        .map(|id| {
            corpus.iter().find(|d| &d.doc_id == id).cloned().unwrap_or_else(|| ExemplarDocument {
                doc_id: id.clone(),
                analysis_text: index.passages().iter().find(|p| &p.doc_id == id).map(|p| p.text.clone()).unwrap_or_default(),
                conclusion_text: None,
            })
        })
        .collect();
    tracer.emit(EventKind::ExemplarsRetrieved {
        queries: queries.len(),
        consensus: Some(consensus.clone()),
        selected: consensus.selected.clone(),
    });
    ExemplarSet {
        docs,
        provenance: Some(consensus),
    }
}

fn findings_block(results: &[LocalResult]) -> String {
    results
        .iter()
        .map(|r| format!("[step {}] {}", r.step_index, r.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// `Q:` lines (an optional number after the Q is allowed); `NONE` means no
/// gaps. `None` when the reply has neither.
pub fn parse_gap_queries(text: &str) -> Option<Vec<String>> {
    let mut out = Vec::new();
    let mut none = false;
    for line in text.lines() {
        let l = line.trim().trim_start_matches(['-', '*', ' ']);
        if l.eq_ignore_ascii_case("none") || l.eq_ignore_ascii_case("none.") {
            none = true;
            continue;
        }
        let Some(rest) = l.strip_prefix('Q').or_else(|| l.strip_prefix('q')) else { continue };
        let rest = rest.trim_start_matches(|c: char| c.is_ascii_digit());
        let Some(q) = rest.strip_prefix(':').or_else(|| rest.strip_prefix('.')) else { continue };
        let q = q.trim();
        if !q.is_empty() {
            out.push(q.to_string());
        }
    }
    (none || !out.is_empty()).then_some(out)
}

pub fn gap_queries(
    gateway: &Gateway,
    tracer: &Tracer,
    results: &[LocalResult],
    background: &str,
    round: u32,
    max_queries: usize,
) -> Result<Vec<GapQuery>, GatewayError> {
    let req = ChatRequest::new(RoleModel::SolverModel, TemplateId::Gap)
        .var("findings", findings_block(results))
        .var("background", background);
    let reply = gateway.complete(&req, tracer)?;
    let mut texts = parse_gap_queries(&reply.text).unwrap_or_else(|| {
        tracer.warn("gap analysis output unparseable; skipping gap round");
        Vec::new()
    });
    if texts.len() > max_queries {
        tracer.warn(format!("{} gap queries; keeping the first {max_queries}", texts.len()));
        texts.truncate(max_queries);
    }
    let queries: Vec<GapQuery> = texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| GapQuery {
            q_id: format!("g{round}-{}", i + 1),
            text,
        })
        .collect();
    tracer.emit(EventKind::GapQueries {
        round,
        queries: queries.clone(),
    });
    Ok(queries)
}

fn exemplar_block(exemplars: &ExemplarSet) -> String {
    if exemplars.docs.is_empty() {
        return "(no exemplars available for this case; rely on the case findings only)".to_string();
    }
    exemplars
        .docs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            format!(
                "<<<EXEMPLAR {n} | style reference only, not evidence for this case>>>\n{}\n<<<END EXEMPLAR {n}>>>",
                d.analysis_text,
                n = i + 1
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0x1e]);
    }
    hex::encode(h.finalize())
}

fn lower_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Doc ids of exemplars sharing a run of at least `n` consecutive words
/// (case- and punctuation-insensitive) with `text`.
pub fn exemplar_overlaps(text: &str, exemplars: &[ExemplarDocument], n: usize) -> Vec<String> {
    let words = lower_words(text);
    if words.len() < n || n == 0 {
        return vec![];
    }
    let grams: std::collections::HashSet<&[String]> = words.windows(n).collect();
    exemplars
        .iter()
        .filter(|d| lower_words(&d.analysis_text).windows(n).any(|w| grams.contains(w)))
        .map(|d| d.doc_id.clone())
        .collect()
}

pub fn compose_analysis(
    gateway: &Gateway,
    tracer: &Tracer,
    results: &[LocalResult],
    exemplars: &ExemplarSet,
    background: &str,
) -> Result<DraftAnalysis, GlobalError> {
    if results.is_empty() {
        return Err(GlobalError::NoResults);
    }
    let findings = findings_block(results);
    let block = exemplar_block(exemplars);
    let request = |feedback: &str| {
        ChatRequest::new(RoleModel::SolverModel, TemplateId::Summary)
            .var("findings", &findings)
            .var("background", background)
            .var("exemplars", &block)
            .var("feedback", feedback)
    };
    let mut text = gateway.complete(&request(""), tracer)?.text.trim().to_string();
    if text.is_empty() {
        tracer.warn("composition output empty; re-prompting");
        text = gateway
            .complete(&request("\nYour previous reply was empty. Write the analysis.\n"), tracer)?
            .text
            .trim()
            .to_string();
    }
    if text.is_empty() {
        return Err(GlobalError::EmptyComposition);
    }
    let overlaps = exemplar_overlaps(&text, &exemplars.docs, OVERLAP_WORDS);
    if !overlaps.is_empty() {
        tracer.warn(format!("analysis shares {OVERLAP_WORDS}-word runs with exemplars {}", overlaps.join(", ")));
    }
    let ids: Vec<&str> = exemplars.docs.iter().map(|d| d.doc_id.as_str()).collect();
    let draft = DraftAnalysis {
        version: 1,
        text,
        inputs_digest: digest(&[&findings, &ids.join(","), &block]),
    };
    tracer.emit(EventKind::DraftComposed { draft: draft.clone() });
    Ok(draft)
}

/// Contiguous versions 1..n with the critiques behind each revision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftChain {
    pub versions: Vec<DraftAnalysis>,
    pub trail: Vec<RevisionRecord>,
    pub critiques: Vec<Critique>,
    pub approval: Option<Approval>,
}

impl DraftChain {
    pub fn new(first: DraftAnalysis) -> Self {
        DraftChain {
            versions: vec![first],
            trail: Vec::new(),
            critiques: Vec::new(),
            approval: None,
        }
    }

    pub fn current(&self) -> &DraftAnalysis {
        self.versions.last().expect("chain is never empty")
    }

    pub fn version(&self, v: u32) -> Option<&DraftAnalysis> {
        self.versions.iter().find(|d| d.version == v)
    }

    pub fn next_critique_id(&self) -> String {
        format!("c{}", self.critiques.len() + 1)
    }

    /// Checks that every critique is non-empty and targets the current
    /// version, and that the draft is still open.
    pub fn check(&self, critiques: &[Critique]) -> Result<(), GlobalError> {
        if self.approval.is_some() {
            return Err(GlobalError::AlreadyApproved);
        }
        if critiques.is_empty() {
            return Err(GlobalError::NoCritiques);
        }
        let current = self.current().version;
        for c in critiques {
            if c.text.trim().is_empty() {
                return Err(GlobalError::EmptyCritique);
            }
            if c.target_version != current {
                return Err(GlobalError::StaleVersion {
                    target: c.target_version,
                    current,
                });
            }
        }
        Ok(())
    }

    /// Appends a revision produced from `critiques`.
    pub fn push_revision(&mut self, text: String, inputs_digest: String, critiques: Vec<Critique>) -> Result<&DraftAnalysis, GlobalError> {
        self.check(&critiques)?;
        let version = self.current().version + 1;
        self.trail.push(RevisionRecord {
            version,
            critique_ids: critiques.iter().map(|c| c.critique_id.clone()).collect(),
        });
        self.critiques.extend(critiques);
        self.versions.push(DraftAnalysis {
            version,
            text,
            inputs_digest,
        });
        Ok(self.current())
    }

    pub fn approve(&mut self, reviewer: Option<String>, auto: bool) -> Result<&Approval, GlobalError> {
        if self.approval.is_some() {
            return Err(GlobalError::AlreadyApproved);
        }
        self.approval = Some(Approval {
            version: self.current().version,
            reviewer,
            auto,
        });
        Ok(self.approval.as_ref().unwrap())
    }
}

/// One batched revision call over the current draft and all critiques.
pub fn apply_critiques(
    gateway: &Gateway,
    tracer: &Tracer,
    chain: &mut DraftChain,
    critiques: Vec<Critique>,
    results: &[LocalResult],
    background: &str,
) -> Result<DraftAnalysis, GlobalError> {
    chain.check(&critiques)?;
    let critique_text = critiques
        .iter()
        .map(|c| format!("[{} by {}] {}", c.critique_id, c.author, c.text))
        .collect::<Vec<_>>()
        .join("\n");
    let current = chain.current().clone();
    let findings = findings_block(results);
    let req = ChatRequest::new(RoleModel::SolverModel, TemplateId::Revise)
        .var("draft", &current.text)
        .var("critiques", &critique_text)
        .var("findings", &findings)
        .var("background", background);
    let text = gateway.complete(&req, tracer)?.text.trim().to_string();
    if text.is_empty() {
        return Err(GlobalError::EmptyRevision);
    }
    let inputs_digest = digest(&[&current.inputs_digest, &critique_text]);
    let draft = chain.push_revision(text, inputs_digest, critiques.clone())?.clone();
    tracer.emit(EventKind::CritiquesApplied {
        critiques,
        draft: draft.clone(),
    });
    Ok(draft)
}

/// Forensic-model call over the approved version.
pub fn conclude(gateway: &Gateway, tracer: &Tracer, chain: &DraftChain) -> Result<FinalReport, GlobalError> {
    let approval = chain
        .approval
        .as_ref()
        .ok_or(GlobalError::NotApproved(chain.current().version))?;
    let approved = chain
        .version(approval.version)
        .ok_or(GlobalError::NotApproved(approval.version))?
        .clone();
    let req = ChatRequest::new(RoleModel::ForensicModel, TemplateId::Conclude).var("analysis", &approved.text);
    let short_form = gateway.complete(&req, tracer)?.text.trim().to_string();
    let report = FinalReport {
        long_form: approved,
        short_form,
        revision_trail: chain.trail.clone(),
        approved_by: approval.reviewer.clone(),
    };
    tracer.emit(EventKind::Concluded { report: report.clone() });
    Ok(report)
}
