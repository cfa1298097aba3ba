use std::collections::BTreeMap;

use feat_core::gateway::EmbeddingVector;
use feat_core::index::VectorIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

const INSTANCES: usize = 100;

fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Fewer than `k` docs beat doc `d` (higher score, or a tie and a smaller id).
fn in_top(scores: &[(String, f64)], d: usize, k: usize) -> bool {
    let (id, s) = &scores[d];
    scores.iter().filter(|(e, t)| t > s || (t == s && e < id)).count() < k
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}

pub fn check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0);
    for n in 0..INSTANCES {
        let dim = rng.random_range(1..=8);
        let n_docs = rng.random_range(1..=20);
        let mut docs: Vec<(String, Vec<f64>)> = Vec::new();
        for i in 0..n_docs {
            // duplicates force exact score ties
            let v = match docs.last() {
                Some((_, prev)) if rng.random_bool(0.2) => prev.clone(),
                _ => random_vector(&mut rng, dim),
            };
            docs.push((format!("d{i:02}"), v));
        }
        let queries: Vec<Vec<f64>> = (0..rng.random_range(1..=8)).map(|_| random_vector(&mut rng, dim)).collect();
        let per_query = rng.random_range(1..=4);
        let final_k = rng.random_range(1..=6);

        let scores: Vec<Vec<(String, f64)>> = queries
            .iter()
            .map(|q| docs.iter().map(|(id, v)| (id.clone(), naive_cosine(q, v))).collect())
            .collect();
        let mut frequency: BTreeMap<String, u32> = BTreeMap::new();
        let mut best: BTreeMap<String, f64> = BTreeMap::new();
        for s in &scores {
            for d in 0..docs.len() {
                if in_top(s, d, per_query) {
                    *frequency.entry(s[d].0.clone()).or_insert(0) += 1;
                    let b = best.entry(s[d].0.clone()).or_insert(f64::MIN);
                    *b = b.max(s[d].1);
                }
            }
        }
        let beats = |a: &String, b: &String| {
            frequency[a] > frequency[b] || (frequency[a] == frequency[b] && (best[a] > best[b] || (best[a] == best[b] && a < b)))
        };
        let mut ranked: Vec<(usize, String)> = frequency
            .keys()
            .map(|d| (frequency.keys().filter(|e| beats(e, d)).count(), d.clone()))
            .filter(|(r, _)| *r < final_k)
            .collect();
        ranked.sort();
        let want: Vec<String> = ranked.into_iter().map(|(_, d)| d).collect();

        let index = VectorIndex::from_documents(
            docs.iter()
                .map(|(id, v)| (id.clone(), String::new(), EmbeddingVector::new(v.clone()).unwrap()))
                .collect(),
        )
        .map_err(|e| e.to_string())?;
        let qs: Vec<EmbeddingVector> = queries.iter().map(|q| EmbeddingVector::new(q.clone()).unwrap()).collect();
        let got = index.consensus_retrieve(&qs, per_query, final_k).map_err(|e| e.to_string())?;
        ensure!(got.selected == want, "instance {n}: selected {:?}, oracle {:?}", got.selected, want);
        ensure!(got.frequency == frequency, "instance {n}: frequencies differ");
        for (q, (hits, s)) in got.per_query_hits.iter().zip(&scores).enumerate() {
            ensure!(hits.len() == docs.len().min(per_query), "instance {n} query {q}: {} hits", hits.len());
            for h in hits {
                let d = s.iter().position(|(id, _)| *id == h.doc_id).unwrap();
                ensure!(in_top(s, d, per_query), "instance {n} query {q}: {} is not in the top {per_query}", h.doc_id);
                ensure!((h.score - s[d].1).abs() <= 1e-12, "instance {n} query {q}: score {} vs {}", h.score, s[d].1);
            }
        }
    }
    Ok(format!("{INSTANCES} random instances: selections exact, scores within 1e-12"))
}
