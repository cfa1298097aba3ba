use feat_eval::{bleu, bootstrap_ci, meteor_lite, rouge_1, rouge_l, tokenize, wilcoxon_one_sided, PairedSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::reference_dir;
use crate::{ensure, Outcome};

const TOKENS: [&str; 6] = ["a", "b", "c", "d", "ab", "死"];
const WORDS: [&str; 10] = ["ethanol", "edema", "lungs", "death", "acute", "no", "injury", "死因", "heart", "g"];

fn pairs(diffs: &[f64]) -> Vec<PairedSample> {
    diffs
        .iter()
        .enumerate()
        .map(|(i, d)| PairedSample {
            pair_id: format!("p{i}"),
            system_a_score: *d,
            system_b_score: 0.0,
        })
        .collect()
}

/// P(W+ >= w) over all 2^n sign assignments, with average ranks.
fn wilcoxon_enumerated(diffs: &[f64]) -> f64 {
    let d: Vec<f64> = diffs.iter().copied().filter(|x| *x != 0.0).collect();
    let rank = |i: usize| {
        let a = d[i].abs();
        d.iter().filter(|x| x.abs() < a).count() as f64 + (d.iter().filter(|x| x.abs() == a).count() as f64 + 1.0) / 2.0
    };
    let ranks: Vec<f64> = (0..d.len()).map(rank).collect();
    let w: f64 = (0..d.len()).filter(|i| d[*i] > 0.0).map(|i| ranks[i]).sum();
    let ge = (0u32..(1 << d.len()))
        .filter(|mask| (0..d.len()).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum::<f64>() >= w - 1e-9)
        .count();
    ge as f64 / (1u64 << d.len()) as f64
}

fn brute_lcs(a: &[String], b: &[String]) -> usize {
    (0u32..(1 << a.len()))
        .filter_map(|mask| {
            let sub: Vec<&String> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
            let mut it = b.iter();
            sub.iter().all(|x| it.any(|y| y == *x)).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

pub fn check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6E);

    for n in 0..300 {
        let x = (0..rng.random_range(1..30)).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ");
        for (name, v) in [("bleu", bleu(&x, &x)), ("rouge_1", rouge_1(&x, &x)), ("rouge_l", rouge_l(&x, &x)), ("meteor", meteor_lite(&x, &x))] {
            ensure!((v - 1.0).abs() <= 1e-9, "identity {n}: {name} = {v} for {x:?}");
        }
    }

    for n in 0..500 {
        let mut side = || -> Vec<String> { (0..rng.random_range(0..=8)).map(|_| TOKENS[rng.random_range(0..TOKENS.len())].to_string()).collect() };
        let (a, b) = (side(), side());
        let (ja, jb) = (a.join(" "), b.join(" "));
        ensure!(tokenize(&ja) == a && tokenize(&jb) == b, "lcs {n}: tokens changed under tokenization");
        let l = brute_lcs(&a, &b) as f64;
        let want = if l == 0.0 {
            0.0
        } else {
            let (p, r) = (l / a.len() as f64, l / b.len() as f64);
            2.0 * p * r / (p + r)
        };
        let got = rouge_l(&ja, &jb);
        ensure!((got - want).abs() < 1e-12, "lcs {n}: rouge_l {got} vs brute force {want} for {ja:?} / {jb:?}");
    }

    const STEPS: [f64; 10] = [-3.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0, 4.0];
    let mut wilcoxon_cases = 0;
    while wilcoxon_cases < 300 {
        let d: Vec<f64> = (0..rng.random_range(5..=10)).map(|_| STEPS[rng.random_range(0..STEPS.len())]).collect();
        if d.iter().filter(|x| **x != 0.0).count() < 5 {
            continue;
        }
        let got = wilcoxon_one_sided(&pairs(&d)).map_err(|e| e.to_string())?;
        let want = wilcoxon_enumerated(&d);
        ensure!((got - want).abs() < 1e-12, "wilcoxon {d:?}: {got} vs enumerated {want}");
        wilcoxon_cases += 1;
    }
    let five = wilcoxon_one_sided(&pairs(&[0.1, 0.2, 0.3, 0.4, 0.5])).map_err(|e| e.to_string())?;
    ensure!(five == 0.03125, "five positive differences gave {five}");

    let constant = bootstrap_ci(&[0.7; 12], 10_000, 0.95, 1).map_err(|e| e.to_string())?;
    ensure!(constant == (0.7, 0.7), "constant data gave {constant:?}");

    let scores: Vec<f64> = std::fs::read_to_string(reference_dir().join("metric_scores.txt"))
        .unwrap()
        .lines()
        .map(|l| l.trim().parse().unwrap())
        .collect();
    let a = bootstrap_ci(&scores, 100_000, 0.95, 0).map_err(|e| e.to_string())?;
    let b = bootstrap_ci(&scores, 200_000, 0.95, 0).map_err(|e| e.to_string())?;
    let shift = (a.0 - b.0).abs().max((a.1 - b.1).abs());
    ensure!(shift < 0.001, "doubling resamples moved the interval by {:.4} pp", shift * 100.0);

    Ok(format!(
        "identity, rouge_l vs brute-force LCS, {wilcoxon_cases} enumerated Wilcoxon cases, p=0.03125, zero-width constant CI, doubling shift {:.4} pp",
        shift * 100.0
    ))
}
