use std::collections::BTreeSet;
use std::sync::Arc;

use feat_core::gateway::{Fallback, Gateway, ScriptedBackend, TemplateId};
use feat_core::planner::{plan, PlanError, PlannerLimits};
use feat_core::trace::{EventKind, FixedClock, Tracer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

const BG: &str = "## Autopsy findings\nPulmonary edema.";
const INSTANCES: usize = 100;

fn tracer() -> Tracer {
    Tracer::new(Arc::new(FixedClock(1_700_000_000_000)))
}

fn backend(tree: &str, selection: &str) -> ScriptedBackend {
    let mut b = ScriptedBackend::new(Fallback::Error);
    b.add_default(TemplateId::Tree, tree);
    b.add_default(TemplateId::Select, selection);
    b.add_default(TemplateId::Adapt, "adapted instruction");
    b
}

/// A root then nodes whose depth moves by at most one per line; depths
/// reach past the bound.
fn random_outline(rng: &mut ChaCha8Rng) -> String {
    let mut s = "[root] Determine the cause of death\n".to_string();
    let mut d = 1usize;
    for i in 0..rng.random_range(1..25) {
        s.push_str(&format!("{}[n{i}] step {i}\n", "  ".repeat(d)));
        d = match rng.random_range(0..3) {
            0 => d + 1,
            1 => d,
            _ => d.saturating_sub(1).max(1),
        };
    }
    s
}

pub fn check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9A);
    let mut deepest = 0;
    for n in 0..INSTANCES {
        let outline = random_outline(&mut rng);
        let picks: Vec<String> = (0..rng.random_range(0..10)).map(|_| format!("n{}", rng.random_range(0..40))).collect();
        let gw = Gateway::scripted(backend(&outline, &format!("SELECTED: {}", picks.join(", "))));
        let t = tracer();
        let (tree, p) = plan(&gw, &t, BG, &[], PlannerLimits::default()).map_err(|e| format!("instance {n}: {e}"))?;
        deepest = deepest.max(outline.lines().map(|l| (l.len() - l.trim_start().len()) / 2).max().unwrap());
        ensure!(tree.max_depth() <= 4, "instance {n}: depth {}", tree.max_depth());
        ensure!(tree.validate(4).is_ok(), "instance {n}: invalid tree");

        let events = t.events();
        let selected: BTreeSet<String> = events
            .iter()
            .find_map(|e| match &e.kind {
                EventKind::NodesSelected { selected, .. } => Some(selected.iter().cloned().collect()),
                _ => None,
            })
            .ok_or(format!("instance {n}: no selection logged"))?;
        let adapted: BTreeSet<String> = events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::NodeAdapted { node_id, .. } => Some(node_id.clone()),
                _ => None,
            })
            .collect();
        let all: BTreeSet<String> = tree.nodes.keys().cloned().collect();
        ensure!(adapted.is_subset(&selected), "instance {n}: adapted {adapted:?} not within selected {selected:?}");
        ensure!(selected.is_subset(&all), "instance {n}: selected {selected:?} not within the tree");
        ensure!(p.steps.len() == selected.len(), "instance {n}: {} steps for {} selected", p.steps.len(), selected.len());
    }

    let gw = Gateway::scripted(backend("Here is my plan:\n1. look\n2. think", "SELECTED: n0"));
    let t = tracer();
    let err = plan(&gw, &t, BG, &[], PlannerLimits::default());
    ensure!(matches!(err, Err(PlanError::Parse { .. })), "malformed outline gave {err:?}");
    let tree_calls = t
        .events()
        .iter()
        .filter(|e| matches!(e.kind, EventKind::ModelCall { template_id: TemplateId::Tree, .. }))
        .count();
    let repairs = t.events().iter().filter(|e| matches!(e.kind, EventKind::PlanRepair { .. })).count();
    ensure!(tree_calls == 2 && repairs == 1, "malformed outline: {tree_calls} tree calls, {repairs} repairs");

    Ok(format!(
        "{INSTANCES} random trees (up to depth {deepest}) within depth 4 and adapted <= selected <= tree; malformed output repaired once then typed error"
    ))
}
