use std::collections::HashMap;

use crate::tokenize::tokenize;
use crate::EvalError;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and the candidate n-gram total.
fn clipped(cand: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let matched = c.iter().map(|(g, k)| (*k).min(r.get(g).copied().unwrap_or(0))).sum();
    (matched, cand.len().saturating_sub(n - 1))
}

fn f1(matched: usize, cand_total: usize, ref_total: usize) -> f64 {
    if matched == 0 || cand_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let p = matched as f64 / cand_total as f64;
    let r = matched as f64 / ref_total as f64;
    2.0 * p * r / (p + r)
}

/// Sentence BLEU-4 with uniform weights and a brevity penalty. Unigram
/// precision is unsmoothed; orders 2 to 4 use add-one smoothing
/// `(m + 1) / (t + 1)`. So disjoint texts score exactly 0.
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    if c.is_empty() {
        tracing::warn!("empty candidate; BLEU is 0");
        return 0.0;
    }
    if r.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (m, t) = clipped(&c, &r, n);
        let p = if n == 1 {
            m as f64 / t as f64
        } else {
            (m as f64 + 1.0) / (t as f64 + 1.0)
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln() / 4.0;
    }
    let bp = if c.len() >= r.len() {
        1.0
    } else {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    };
    (bp * log_sum.exp()).clamp(0.0, 1.0)
}

/// Unigram-overlap `(precision, recall, F1)` with clipped counts.
pub fn rouge_1_prf(candidate: &str, reference: &str) -> (f64, f64, f64) {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    let (m, _) = clipped(&c, &r, 1);
    if c.is_empty() || r.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    (m as f64 / c.len() as f64, m as f64 / r.len() as f64, f1(m, c.len(), r.len()))
}

pub fn rouge_1(candidate: &str, reference: &str) -> f64 {
    rouge_1_prf(candidate, reference).2
}

pub fn rouge_2(candidate: &str, reference: &str) -> f64 {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    let (m, t) = clipped(&c, &r, 2);
    f1(m, t, r.len().saturating_sub(1))
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F1.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    f1(lcs_len(&c, &r), c.len(), r.len())
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::DimMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(EvalError::ZeroNorm);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine between the embeddings of the two texts. `embed` receives both
/// texts in one batch, candidate first.
pub fn embedding_score<E>(candidate: &str, reference: &str, embed: E) -> Result<f64, EvalError>
where
    E: FnOnce(&[String]) -> Result<Vec<Vec<f64>>, String>,
{
    let v = embed(&[candidate.to_string(), reference.to_string()]).map_err(EvalError::Embed)?;
    match v.as_slice() {
        [a, b] => cosine_similarity(a, b),
        _ => Err(EvalError::Embed(format!("expected 2 vectors, got {}", v.len()))),
    }
}
