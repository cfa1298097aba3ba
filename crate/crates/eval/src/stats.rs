use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::EvalError;

pub const DEFAULT_RESAMPLES: usize = 100_000;
const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub pair_id: String,
    pub system_a_score: f64,
    pub system_b_score: f64,
}

/// ChaCha8 seeded from a `u64` (`seed_from_u64`). An index below `n` is
/// `(next_u64() * n) >> 64` in 128-bit arithmetic.
pub struct BootstrapRng(ChaCha8Rng);

impl BootstrapRng {
    pub fn new(seed: u64) -> Self {
        BootstrapRng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn index(&mut self, n: usize) -> usize {
        ((self.0.next_u64() as u128 * n as u128) >> 64) as usize
    }
}

/// Mean and standard error of the mean (sample standard deviation over
/// `sqrt(n)`); the error is 0 for fewer than two values.
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Normal approximation to the bootstrap: the sample mean plus or minus
/// `z * sd` of `resamples` resampled means.
pub fn bootstrap_ci(values: &[f64], resamples: usize, level: f64, seed: u64) -> Result<(f64, f64), EvalError> {
    if values.len() < 2 {
        return Err(EvalError::TooFew { need: 2, got: values.len() });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(EvalError::Level(level));
    }
    if values.iter().all(|v| *v == values[0]) {
        return Ok((values[0], values[0]));
    }
    let resamples = resamples.max(2);
    let n = values.len();
    let mut rng = BootstrapRng::new(seed);
    let means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.index(n)]).sum::<f64>() / n as f64)
        .collect();
    let (_, sem) = mean_sem(&means);
    let sd = sem * (resamples as f64).sqrt();
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let mean = values.iter().sum::<f64>() / n as f64;
    Ok((mean - z * sd, mean + z * sd))
}

/// Average ranks of `|d|`, doubled so ties stay integral.
fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 averaged, times two
        let doubled = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// P(W+ >= observed) where W+ sums the ranks of positive `a - b`
/// differences; small p favours system A. Zero differences are dropped.
/// Exact sign-flip distribution for n <= 25, otherwise the normal
/// approximation with tie correction and continuity correction.
pub fn wilcoxon_one_sided(pairs: &[PairedSample]) -> Result<f64, EvalError> {
    let diffs: Vec<f64> = pairs
        .iter()
        .map(|p| p.system_a_score - p.system_b_score)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Err(EvalError::Degenerate);
    }
    if diffs.len() < 5 {
        return Err(EvalError::TooFew { need: 5, got: diffs.len() });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let observed: u64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| *r).sum();
    let n = diffs.len();
    if n <= EXACT_MAX_N {
        let total: u64 = ranks.iter().sum();
        let mut dist = vec![0f64; total as usize + 1];
        dist[0] = 1.0;
        for &r in &ranks {
            for s in (r as usize..=total as usize).rev() {
                dist[s] += dist[s - r as usize];
            }
        }
        let hits: f64 = dist[observed as usize..].iter().sum();
        return Ok((hits / 2f64.powi(n as i32)).min(1.0));
    }
    let nf = n as f64;
    let w = observed as f64 / 2.0;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut ties = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
        let t = j as f64;
        ties += t * t * t - t;
        i += j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    let z = (w - 0.5 - mean) / var.sqrt();
    Ok(1.0 - Normal::standard().cdf(z))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(doubled_ranks(&[0.5, 0.1, 0.5, 0.2]), vec![7, 2, 7, 4]);
    }

    #[test]
    fn index_stays_in_range() {
        let mut r = BootstrapRng::new(7);
        assert!((0..1000).all(|_| r.index(3) < 3));
    }
}
