use std::collections::BTreeMap;
use std::sync::Arc;

use feat_core::fixtures::ToolFixture;
use feat_core::gateway::{canonical_hash, Fallback, FixtureMatch, Gateway, ScriptedBackend, TemplateId};
use feat_core::index::{Granularity, VectorIndex};
use feat_core::planner::TaskSpec;
use feat_core::solver::{run_react, ReactEnv, Termination, ToolFixtures, ToolRegistry, ToolSource, ToolTrace, FAILURE_BUDGET};
use feat_core::trace::{EventKind, FixedClock, Tracer};

use crate::{ensure, Outcome};

#[derive(Debug, Clone, Copy)]
enum Behavior {
    NeverFinal,
    UnknownTool,
    FailingTool,
}

fn task() -> TaskSpec {
    TaskSpec {
        task_instruction: "Assess the blood ethanol level".into(),
        forensic_background: "## Toxicology\nBlood ethanol 0.32 g/dL.".into(),
    }
}

fn tracer() -> Tracer {
    Tracer::new(Arc::new(FixedClock(1_700_000_000_000)))
}

fn run(b: Behavior, k: usize) -> Result<(ToolTrace, Tracer, ToolRegistry), String> {
    let mut s = ScriptedBackend::new(Fallback::Echo);
    s.set_echo_dim(16);
    let reply = match b {
        Behavior::NeverFinal => "THOUGHT: look it up\nTOOL: kb_lookup\nARGS: {\"query\": \"ethanol\"}",
        Behavior::UnknownTool => "THOUGHT: try\nTOOL: crystal_ball\nARGS: {\"query\": \"x\"}",
        Behavior::FailingTool => "THOUGHT: search\nTOOL: pubmed_search\nARGS: {\"query\": \"ethanol\"}",
    };
    s.add_default(TemplateId::React, reply);
    let gw = Gateway::scripted(s);
    let docs = vec![("tox-handbook".to_string(), "Ethanol above 0.3 g/dL is potentially lethal. Aspiration is common.".to_string())];
    let kb = VectorIndex::build(&gw, &tracer(), &docs, Granularity::Sentence).map_err(|e| e.to_string())?;
    // the pubmed fixture is not JSON, so that tool always fails
    let broken = ToolFixtures::new(vec![ToolFixture {
        tool_name: "pubmed_search".into(),
        matcher: FixtureMatch::Any,
        result_text: "<html>503</html>".into(),
    }]);
    let tools = ToolRegistry::standard(Arc::new(kb), ToolSource::Offline(Arc::new(broken)));
    let t = tracer();
    let env = ReactEnv {
        gateway: &gw,
        tracer: &t,
        tools: &tools,
        step_index: 0,
    };
    let trace = run_react(&env, &task(), "(empty)", k).map_err(|e| e.to_string())?;
    Ok((trace, t, tools))
}

/// h_k = h_{k-1} + observation_k, and turn k saw exactly h_{k-1}.
fn history_law(trace: &ToolTrace, t: &Tracer, tools: &ToolRegistry, k: usize) -> Result<(), String> {
    let mut h = trace.initial_history.clone();
    ensure!(trace.history_at(0) == h, "h_0 differs from the initial history");
    for (i, step) in trace.steps.iter().enumerate() {
        ensure!(step.k == i + 1, "step numbered {} at position {}", step.k, i + 1);
        h.push_str(&step.observation);
        ensure!(trace.history_at(i + 1) == h, "h_{} is not h_{} plus the observation", i + 1, i);
    }
    ensure!(trace.history == h, "final history is not the concatenation");
    let hashes: Vec<String> = t
        .events()
        .into_iter()
        .filter_map(|e| match e.kind {
            EventKind::ModelCall {
                template_id: TemplateId::React,
                request_hash,
                ..
            } => Some(request_hash),
            _ => None,
        })
        .collect();
    for (turn, hash) in hashes.iter().enumerate() {
        let vars: BTreeMap<String, String> = [
            ("task_instruction", task().task_instruction),
            ("tools", tools.describe()),
            ("step", (turn + 1).to_string()),
            ("max_steps", k.to_string()),
            ("history", trace.history_at(turn)),
        ]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b))
        .collect();
        ensure!(&canonical_hash(&vars) == hash, "turn {} was not prompted with h_{}", turn + 1, turn);
    }
    Ok(())
}

pub fn check() -> Outcome {
    let mut runs = 0;
    for b in [Behavior::NeverFinal, Behavior::UnknownTool, Behavior::FailingTool] {
        for k in 1..=8 {
            let (trace, t, tools) = run(b, k)?;
            let want = match b {
                Behavior::NeverFinal => (Termination::StepCap, k),
                _ if k >= FAILURE_BUDGET => (Termination::ToolFailureBudget, FAILURE_BUDGET),
                _ => (Termination::StepCap, k),
            };
            ensure!(trace.steps.len() <= k, "{b:?} K={k}: {} steps", trace.steps.len());
            ensure!(
                (trace.terminated_by, trace.steps.len()) == want,
                "{b:?} K={k}: ended {:?} after {} steps, expected {want:?}",
                trace.terminated_by,
                trace.steps.len()
            );
            let finished: Vec<Termination> = t
                .events()
                .into_iter()
                .filter_map(|e| match e.kind {
                    EventKind::ReactFinished { terminated_by, .. } => Some(terminated_by),
                    _ => None,
                })
                .collect();
            ensure!(finished == vec![trace.terminated_by], "{b:?} K={k}: logged terminations {finished:?}");
            if !matches!(b, Behavior::NeverFinal) {
                ensure!(trace.steps.iter().all(|s| s.error.is_some()), "{b:?} K={k}: a failing step has no error");
            }
            history_law(&trace, &t, &tools, k).map_err(|e| format!("{b:?} K={k}: {e}"))?;
            runs += 1;
        }
    }
    Ok(format!("{runs} runs (never-final, unknown tool, failing tool; K=1..8) bounded, terminations and history law hold"))
}
