//! Exact cosine search over embedded passages and frequency-consensus
//! retrieval.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{EmbeddingVector, Gateway, GatewayError};
use crate::text::{segment, SegmentPolicy};
use crate::trace::Tracer;

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("index is empty")]
    Empty,
    #[error("empty query list")]
    NoQueries,
    #[error("duplicate passage ({doc_id}, {passage_id})")]
    DuplicatePassage { doc_id: String, passage_id: String },
    #[error("index file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Sentence,
    Paragraph,
    Document,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub doc_id: String,
    pub passage_id: String,
    pub granularity: Granularity,
    pub text: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub doc_id: String,
    pub passage_id: String,
    pub score: f64,
}

fn hit_order(a: &RetrievalHit, b: &RetrievalHit) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
        .then_with(|| a.passage_id.cmp(&b.passage_id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusResult {
    pub selected: Vec<String>,
    pub frequency: BTreeMap<String, u32>,
    pub per_query_hits: Vec<Vec<RetrievalHit>>,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    dim: usize,
    granularity: Granularity,
    count: usize,
}

/// Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    granularity: Granularity,
    passages: Vec<Passage>,
}

impl VectorIndex {
    pub fn empty(granularity: Granularity) -> Self {
        VectorIndex {
            dim: 0,
            granularity,
            passages: Vec::new(),
        }
    }

    pub fn new(granularity: Granularity, passages: Vec<Passage>) -> Result<Self, IndexError> {
        let dim = passages.first().map(|p| p.vector.dim()).unwrap_or(0);
        let mut seen = BTreeSet::new();
        for p in &passages {
            if p.vector.dim() != dim {
                return Err(IndexError::DimMismatch {
                    expected: dim,
                    got: p.vector.dim(),
                });
            }
            if !seen.insert((p.doc_id.as_str(), p.passage_id.as_str())) {
                return Err(IndexError::DuplicatePassage {
                    doc_id: p.doc_id.clone(),
                    passage_id: p.passage_id.clone(),
                });
            }
        }
        Ok(VectorIndex {
            dim,
            granularity,
            passages,
        })
    }

    /// One document-granularity passage (id `"0"`) per vector.
    pub fn from_documents(docs: Vec<(String, String, EmbeddingVector)>) -> Result<Self, IndexError> {
        let passages = docs
            .into_iter()
            .map(|(doc_id, text, vector)| Passage {
                doc_id,
                passage_id: "0".into(),
                granularity: Granularity::Document,
                text,
                vector,
            })
            .collect();
        VectorIndex::new(Granularity::Document, passages)
    }

    /// Segments each `(doc_id, text)` with `policy` and embeds every span in
    /// one batch. Passage ids are `p1`, `p2`, ... within each document.
    /// `Granularity::Document` keeps each text whole.
    pub fn build(
        gateway: &Gateway,
        tracer: &Tracer,
        docs: &[(String, String)],
        granularity: Granularity,
    ) -> Result<Self, IndexError> {
        let mut spans: Vec<(String, String, String)> = Vec::new();
        for (doc_id, text) in docs {
            match granularity {
                Granularity::Document => {
                    if !text.trim().is_empty() {
                        spans.push((doc_id.clone(), "0".into(), text.clone()));
                    }
                }
                Granularity::Sentence | Granularity::Paragraph => {
                    let policy = if granularity == Granularity::Sentence {
                        SegmentPolicy::Sentence
                    } else {
                        SegmentPolicy::Paragraph
                    };
                    for (i, s) in segment(text, policy).into_iter().enumerate() {
                        spans.push((doc_id.clone(), format!("p{}", i + 1), s));
                    }
                }
            }
        }
        if spans.is_empty() {
            return Ok(VectorIndex::empty(granularity));
        }
        let texts: Vec<String> = spans.iter().map(|s| s.2.clone()).collect();
        let vectors = gateway.embed(&texts, tracer)?;
        let passages = spans
            .into_iter()
            .zip(vectors)
            .map(|((doc_id, passage_id, text), vector)| Passage {
                doc_id,
                passage_id,
                granularity,
                text,
                vector,
            })
            .collect();
        VectorIndex::new(granularity, passages)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn passage(&self, doc_id: &str, passage_id: &str) -> Option<&Passage> {
        self.passages
            .iter()
            .find(|p| p.doc_id == doc_id && p.passage_id == passage_id)
    }

    fn check(&self, query: &EmbeddingVector) -> Result<(), IndexError> {
        if self.passages.is_empty() {
            return Err(IndexError::Empty);
        }
        if query.dim() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        Ok(())
    }

    fn score_all(&self, query: &EmbeddingVector) -> Vec<RetrievalHit> {
        let mut hits: Vec<RetrievalHit> = self
            .passages
            .iter()
            .map(|p| RetrievalHit {
                doc_id: p.doc_id.clone(),
                passage_id: p.passage_id.clone(),
                score: cosine(query.values(), p.vector.values()),
            })
            .collect();
        hits.sort_by(hit_order);
        hits
    }

    /// The `k` highest-cosine passages, sorted by (score desc, doc_id asc,
    /// passage_id asc).
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<RetrievalHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        self.check(query)?;
        let mut hits = self.score_all(query);
        hits.truncate(k);
        Ok(hits)
    }

    /// Best passage of each of the `k` best documents, where a document
    /// scores as its best passage.
    pub fn top_docs(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<RetrievalHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        self.check(query)?;
        let mut seen = BTreeSet::new();
        let hits = self
            .score_all(query)
            .into_iter()
            .filter(|h| seen.insert(h.doc_id.clone()))
            .take(k)
            .collect();
        Ok(hits)
    }

    /// Each query contributes its top `per_query` documents; a document's
    /// frequency is the number of queries that retrieved it. The `final_k`
    /// most frequent documents are selected, ties broken by the highest
    /// cosine among the retrieving hits, then by doc_id.
    pub fn consensus_retrieve(
        &self,
        queries: &[EmbeddingVector],
        per_query: usize,
        final_k: usize,
    ) -> Result<ConsensusResult, IndexError> {
        if queries.is_empty() {
            return Err(IndexError::NoQueries);
        }
        let per_query_hits = queries
            .iter()
            .map(|q| self.top_docs(q, per_query))
            .collect::<Result<Vec<_>, _>>()?;
        let mut frequency: BTreeMap<String, u32> = BTreeMap::new();
        let mut best: BTreeMap<String, f64> = BTreeMap::new();
        for hits in &per_query_hits {
            for h in hits {
                *frequency.entry(h.doc_id.clone()).or_default() += 1;
                let b = best.entry(h.doc_id.clone()).or_insert(f64::NEG_INFINITY);
                if h.score > *b {
                    *b = h.score;
                }
            }
        }
        let mut ranked: Vec<&String> = frequency.keys().collect();
        ranked.sort_by(|a, b| {
            frequency[*b]
                .cmp(&frequency[*a])
                .then_with(|| best[*b].total_cmp(&best[*a]))
                .then_with(|| a.cmp(b))
        });
        let selected = ranked.into_iter().take(final_k).cloned().collect();
        Ok(ConsensusResult {
            selected,
            frequency,
            per_query_hits,
        })
    }

    /// Header line `{dim, granularity, count}` followed by one passage per
    /// line.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), IndexError> {
        let header = Header {
            dim: self.dim,
            granularity: self.granularity,
            count: self.passages.len(),
        };
        let io = |e: std::io::Error| IndexError::Io(e.to_string());
        writeln!(w, "{}", serde_json::to_string(&header).unwrap()).map_err(io)?;
        for p in &self.passages {
            writeln!(w, "{}", serde_json::to_string(p).unwrap()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_from(r: impl BufRead) -> Result<Self, IndexError> {
        let mut lines = r.lines().enumerate();
        let fmt = |line: usize, message: String| IndexError::Format { line, message };
        let (_, first) = lines.next().ok_or_else(|| fmt(1, "missing header".into()))?;
        let first = first.map_err(|e| IndexError::Io(e.to_string()))?;
        let header: Header = serde_json::from_str(&first).map_err(|e| fmt(1, e.to_string()))?;
        let mut passages = Vec::with_capacity(header.count);
        for (i, line) in lines {
            let line = line.map_err(|e| IndexError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let p: Passage = serde_json::from_str(&line).map_err(|e| fmt(i + 1, e.to_string()))?;
            passages.push(p);
        }
        if passages.len() != header.count {
            return Err(fmt(0, format!("header count {} but {} records", header.count, passages.len())));
        }
        let index = VectorIndex::new(header.granularity, passages)?;
        if !index.is_empty() && index.dim != header.dim {
            return Err(IndexError::DimMismatch {
                expected: header.dim,
                got: index.dim,
            });
        }
        Ok(index)
    }
}
