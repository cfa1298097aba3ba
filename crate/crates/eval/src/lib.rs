//! Text-similarity metrics and paired statistics for generated analyses.
//!
//! All overlap metrics share [`tokenize`] and return values in `[0, 1]`.
//! Embedding similarity is a cosine in `[-1, 1]`.

mod meteor;
mod overlap;
mod report;
mod stats;
mod tokenize;

pub use meteor::{meteor_breakdown, meteor_lite, stem, MeteorBreakdown};
pub use overlap::{bleu, cosine_similarity, embedding_score, lcs_len, rouge_1, rouge_1_prf, rouge_2, rouge_l};
pub use report::{evaluate, Embedder, EvalPair, EvalReport, MetricSummary, PairScores, SystemComparison, METRICS};
pub use stats::{bootstrap_ci, mean_sem, wilcoxon_one_sided, BootstrapRng, PairedSample, DEFAULT_RESAMPLES};
pub use tokenize::tokenize;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("degenerate comparison: all differences are zero")]
    Degenerate,
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("embedding failed: {0}")]
    Embed(String),
    #[error("confidence level must be in (0, 1), got {0}")]
    Level(f64),
}
