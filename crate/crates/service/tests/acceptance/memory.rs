use std::sync::Arc;

use feat_core::case::parse_dossier;
use feat_core::gateway::{Fallback, Gateway, ScriptedBackend, TemplateId};
use feat_core::memory::{filter, reflect, MemoryState};
use feat_core::pipeline::{run_case, PipelineConfig, RunStatus};
use feat_core::text::{segment, word_count, SegmentPolicy};
use feat_core::trace::{EventKind, FixedClock, Tracer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::{case_bytes, reference_config, CASES};
use crate::{ensure, Outcome};

const BG: &str = "## Toxicology\nBlood ethanol 0.32 g/dL.";
const SEQUENCES: usize = 150;

const POOL: [&str; 6] = [
    "Ethanol was 0.32 g/dL.",
    "The lungs were edematous.",
    "No injuries were found.",
    "Aspiration was excluded.",
    "The heart weighed 380 g.",
    "死因为急性酒精中毒。",
];

fn tracer() -> Tracer {
    Tracer::new(Arc::new(FixedClock(1_700_000_000_000)))
}

fn words(n: usize) -> String {
    (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
}

fn verdicts(rng: &mut ChaCha8Rng) -> String {
    (0..rng.random_range(0..8))
        .map(|_| format!("{}: {}", rng.random_range(0..9), ["KEEP", "REDUNDANT", "INCONSISTENT", "MAYBE"][rng.random_range(0..4)]))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Filter partitions, memory only grows at the end, entries respect k.
fn random_sequences() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3E);
    let mut entries = 0;
    for n in 0..SEQUENCES {
        let bound = rng.random_range(1..30);
        let t = tracer();
        let mut m = MemoryState::new(bound);
        for step in 0..rng.random_range(1..6) {
            let out = (0..rng.random_range(1..6)).map(|_| POOL[rng.random_range(0..POOL.len())]).collect::<Vec<_>>().join(" ");
            let mut b = ScriptedBackend::new(Fallback::Error);
            b.add_default(TemplateId::Filter, &verdicts(&mut rng));
            b.add_rule(TemplateId::Tidy, &["previous summary had"], &words(rng.random_range(0..80)));
            b.add_default(TemplateId::Tidy, &words(rng.random_range(0..80)));
            let gw = Gateway::scripted(b);

            let f = filter(&gw, &t, &m, &out, BG).map_err(|e| e.to_string())?;
            let mut seen = f.retained.clone();
            seen.extend(f.dropped.iter().map(|d| d.sentence.clone()));
            let mut input = segment(&out, SegmentPolicy::Sentence);
            seen.sort();
            input.sort();
            ensure!(seen == input, "sequence {n} step {step}: filter output is not a partition of its input");

            let next = reflect(&gw, &t, &m, &out, BG, step).map_err(|e| e.to_string())?;
            ensure!(next.len() == m.len() || next.len() == m.len() + 1, "sequence {n}: memory grew by {}", next.len() - m.len());
            ensure!(next.entries[..m.len()] == m.entries[..], "sequence {n} step {step}: earlier entries changed");
            for e in &next.entries {
                ensure!(e.word_count <= bound, "sequence {n}: entry of {} words over bound {bound}", e.word_count);
                ensure!(word_count(&e.text) == e.word_count, "sequence {n}: stored word count is wrong");
            }
            m = next;
        }
        entries += m.len();
    }
    Ok(entries)
}

pub fn check() -> Outcome {
    let entries = random_sequences()?;

    let dir = tempfile::tempdir().unwrap();
    let engine = feat_service::engine::build(&reference_config(dir.path())).map_err(|e| e.to_string())?;

    // every reference case under a tight word bound
    for case in CASES {
        let dossier = parse_dossier(&case_bytes(case)).unwrap();
        let config = PipelineConfig {
            word_bound: 4,
            headless: true,
            ..Default::default()
        };
        let t = tracer();
        let state = run_case(&engine, &t, &dossier, &config, "m");
        ensure!(state.status == RunStatus::Completed, "{case}: {:?}", state.error);
        let mut prev = MemoryState::new(4);
        for e in t.events() {
            if let EventKind::MemoryUpdated { memory } = e.kind {
                ensure!(memory.entries.len() == prev.entries.len() + 1, "{case}: memory update changed length by more than one");
                ensure!(memory.entries[..prev.len()] == prev.entries[..], "{case}: memory update rewrote earlier entries");
                ensure!(memory.entries.iter().all(|e| e.word_count <= 4 && word_count(&e.text) <= 4), "{case}: entry over 4 words");
                prev = memory;
            }
        }
        ensure!(prev == state.memory, "{case}: final memory differs from the last update");
    }

    // an audit that never passes
    let dossier = parse_dossier(&case_bytes("C12")).unwrap();
    for cap in 0..=3u32 {
        let config = PipelineConfig {
            replan_cap: cap,
            headless: true,
            ..Default::default()
        };
        let t = tracer();
        let state = run_case(&engine, &t, &dossier, &config, "r");
        let count = |f: &dyn Fn(&EventKind) -> bool| t.events().iter().filter(|e| f(&e.kind)).count();
        let replans = count(&|k| matches!(k, EventKind::ReplanRequested { .. }));
        let executions = count(&|k| matches!(k, EventKind::PlanLinearized { .. }));
        ensure!(state.status == RunStatus::Completed, "cap {cap}: {:?}", state.error);
        ensure!(replans <= cap as usize, "cap {cap}: {replans} replans");
        ensure!(executions <= 1 + cap as usize, "cap {cap}: {executions} plan executions");
        ensure!(state.plan_phases <= 1 + cap, "cap {cap}: {} plan phases", state.plan_phases);
        ensure!(replans == cap as usize, "cap {cap}: persistent contradiction should use the whole cap, used {replans}");
        ensure!(!state.unresolved.is_empty(), "cap {cap}: unresolved finding not reported");
    }
    Ok(format!(
        "{SEQUENCES} random filter/reflect sequences ({entries} entries), 12 reference cases at k=4, replan caps 0..=3"
    ))
}
