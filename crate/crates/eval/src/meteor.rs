use crate::tokenize::tokenize;

const SUFFIXES: [&str; 13] = ["ations", "ation", "ments", "ment", "ness", "ingly", "ing", "edly", "ed", "es", "ly", "s", "e"];
const MIN_STEM: usize = 3;

/// Strips the first matching suffix that leaves at least three characters.
pub fn stem(token: &str) -> String {
    for s in SUFFIXES {
        if let Some(base) = token.strip_suffix(s) {
            if base.chars().count() >= MIN_STEM {
                return base.to_string();
            }
        }
    }
    token.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeteorBreakdown {
    pub matches: usize,
    pub chunks: usize,
    pub precision: f64,
    pub recall: f64,
    pub fmean: f64,
    pub penalty: f64,
    pub score: f64,
}

impl MeteorBreakdown {
    fn zero() -> Self {
        MeteorBreakdown {
            matches: 0,
            chunks: 0,
            precision: 0.0,
            recall: 0.0,
            fmean: 0.0,
            penalty: 0.0,
            score: 0.0,
        }
    }
}

/// One matching stage: each unaligned candidate token, left to right, takes
/// the unaligned reference position that extends the previous alignment if
/// it matches, else the leftmost match.
fn align_stage(c: &[String], r: &[String], cand_to_ref: &mut [Option<usize>], ref_used: &mut [bool]) {
    for i in 0..c.len() {
        if cand_to_ref[i].is_some() {
            continue;
        }
        let contiguous = i
            .checked_sub(1)
            .and_then(|p| cand_to_ref[p])
            .map(|j| j + 1)
            .filter(|&j| j < r.len() && !ref_used[j] && r[j] == c[i]);
        let pick = contiguous.or_else(|| (0..r.len()).find(|&j| !ref_used[j] && r[j] == c[i]));
        if let Some(j) = pick {
            cand_to_ref[i] = Some(j);
            ref_used[j] = true;
        }
    }
}

/// Exact then suffix-stem matching; `Fmean = 10PR / (R + 9P)`;
/// fragmentation `(chunks - 1) / (matches - 1)` (zero for a single match);
/// penalty `0.5 * frag^3`; score `Fmean * (1 - penalty)`.
pub fn meteor_breakdown(candidate: &str, reference: &str) -> MeteorBreakdown {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    if c.is_empty() || r.is_empty() {
        return MeteorBreakdown::zero();
    }
    let mut cand_to_ref = vec![None; c.len()];
    let mut ref_used = vec![false; r.len()];
    align_stage(&c, &r, &mut cand_to_ref, &mut ref_used);
    let cs: Vec<String> = c.iter().map(|t| stem(t)).collect();
    let rs: Vec<String> = r.iter().map(|t| stem(t)).collect();
    align_stage(&cs, &rs, &mut cand_to_ref, &mut ref_used);

    let pairs: Vec<(usize, usize)> = cand_to_ref.iter().enumerate().filter_map(|(i, j)| j.map(|j| (i, j))).collect();
    let matches = pairs.len();
    if matches == 0 {
        return MeteorBreakdown::zero();
    }
    let chunks = 1 + pairs.windows(2).filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1)).count();
    let precision = matches as f64 / c.len() as f64;
    let recall = matches as f64 / r.len() as f64;
    let fmean = 10.0 * precision * recall / (recall + 9.0 * precision);
    let frag = if matches > 1 {
        (chunks - 1) as f64 / (matches - 1) as f64
    } else {
        0.0
    };
    let penalty = 0.5 * frag.powi(3);
    MeteorBreakdown {
        matches,
        chunks,
        precision,
        recall,
        fmean,
        penalty,
        score: (fmean * (1.0 - penalty)).clamp(0.0, 1.0),
    }
}

/// Reduced METEOR: no synonym or paraphrase stages.
pub fn meteor_lite(candidate: &str, reference: &str) -> f64 {
    meteor_breakdown(candidate, reference).score
}
