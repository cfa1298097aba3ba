use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::meteor::meteor_lite;
use crate::overlap::{bleu, embedding_score, rouge_1, rouge_l};
use crate::stats::{bootstrap_ci, mean_sem, wilcoxon_one_sided, PairedSample};

pub const METRICS: [&str; 5] = ["bleu", "rouge_1", "rouge_l", "meteor", "openai_score"];

/// One line of a pairs file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub pair_id: String,
    pub candidate: String,
    #[serde(default)]
    pub reference: Option<String>,
    #[serde(default)]
    pub system: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub pair_id: String,
    pub system: String,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n: usize,
    pub mean: f64,
    pub sem: f64,
    pub ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemComparison {
    pub system_a: String,
    pub system_b: String,
    pub metric: String,
    pub n_pairs: usize,
    pub p_value: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: Vec<PairScores>,
    /// Pair ids skipped for a missing or empty reference.
    pub excluded: Vec<String>,
    pub summaries: BTreeMap<String, BTreeMap<String, MetricSummary>>,
    pub comparisons: Vec<SystemComparison>,
    pub resamples: usize,
    pub seed: u64,
}

pub type Embedder<'a> = &'a dyn Fn(&[String]) -> Result<Vec<Vec<f64>>, String>;

const DEFAULT_SYSTEM: &str = "default";

/// Scores every pair, summarizes per system and, with exactly two systems,
/// tests the first (by name) against the second on every metric over the
/// shared pair ids.
pub fn evaluate(pairs: &[EvalPair], embed: Option<Embedder<'_>>, resamples: usize, seed: u64) -> EvalReport {
    let mut scored = Vec::new();
    let mut excluded = Vec::new();
    for p in pairs {
        let reference = match p.reference.as_deref() {
            Some(r) if !r.trim().is_empty() => r,
            _ => {
                tracing::warn!(pair_id = %p.pair_id, "no reference; pair excluded");
                excluded.push(p.pair_id.clone());
                continue;
            }
        };
        let mut scores = BTreeMap::new();
        scores.insert("bleu".to_string(), bleu(&p.candidate, reference));
        scores.insert("rouge_1".to_string(), rouge_1(&p.candidate, reference));
        scores.insert("rouge_l".to_string(), rouge_l(&p.candidate, reference));
        scores.insert("meteor".to_string(), meteor_lite(&p.candidate, reference));
        if let Some(e) = embed {
            match embedding_score(&p.candidate, reference, e) {
                Ok(v) => {
                    scores.insert("openai_score".to_string(), v);
                }
                Err(err) => tracing::warn!(pair_id = %p.pair_id, %err, "embedding score unavailable"),
            }
        }
        scored.push(PairScores {
            pair_id: p.pair_id.clone(),
            system: p.system.clone().unwrap_or_else(|| DEFAULT_SYSTEM.to_string()),
            scores,
        });
    }

    let systems: BTreeSet<&str> = scored.iter().map(|s| s.system.as_str()).collect();
    let mut summaries = BTreeMap::new();
    for sys in &systems {
        let mut per_metric = BTreeMap::new();
        for m in METRICS {
            let values: Vec<f64> = scored.iter().filter(|s| s.system == *sys).filter_map(|s| s.scores.get(m).copied()).collect();
            if values.is_empty() {
                continue;
            }
            let (mean, sem) = mean_sem(&values);
            per_metric.insert(
                m.to_string(),
                MetricSummary {
                    n: values.len(),
                    mean,
                    sem,
                    ci: bootstrap_ci(&values, resamples, 0.95, seed).ok(),
                },
            );
        }
        summaries.insert(sys.to_string(), per_metric);
    }

    let mut comparisons = Vec::new();
    if let [a, b] = systems.iter().collect::<Vec<_>>()[..] {
        for m in METRICS {
            let score = |sys: &str, id: &str| {
                scored
                    .iter()
                    .find(|s| s.system == sys && s.pair_id == id)
                    .and_then(|s| s.scores.get(m).copied())
            };
            let samples: Vec<PairedSample> = scored
                .iter()
                .filter(|s| s.system == *a)
                .filter_map(|s| {
                    Some(PairedSample {
                        pair_id: s.pair_id.clone(),
                        system_a_score: score(a, &s.pair_id)?,
                        system_b_score: score(b, &s.pair_id)?,
                    })
                })
                .collect();
            if samples.is_empty() {
                continue;
            }
            let test = wilcoxon_one_sided(&samples);
            comparisons.push(SystemComparison {
                system_a: a.to_string(),
                system_b: b.to_string(),
                metric: m.to_string(),
                n_pairs: samples.len(),
                p_value: test.as_ref().ok().copied(),
                error: test.err().map(|e| e.to_string()),
            });
        }
    }

    EvalReport {
        pairs: scored,
        excluded,
        summaries,
        comparisons,
        resamples,
        seed,
    }
}
