#![allow(dead_code)]

use std::sync::Arc;

use feat_core::case::{parse_dossier, CaseDossier, ExemplarDocument};
use feat_core::fixtures::ToolFixture;
use feat_core::gateway::{Fallback, FixtureMatch, Gateway, ScriptedBackend, TemplateId};
use feat_core::index::{Granularity, VectorIndex};
use feat_core::pipeline::Engine;
use feat_core::solver::{ToolFixtures, ToolRegistry, ToolSource};
use feat_core::trace::{EventKind, FixedClock, Tracer};

pub const TREE: &str = "[root] Determine the cause of death\n  [autopsy] Evaluate autopsy findings\n  [tox] Assess toxicology report\n";

pub fn dossier() -> CaseDossier {
    parse_dossier(
        br#"{"case_id":"T1","demographics":"male, 45","background":"Found unresponsive at home.",
        "clinical_findings":"","autopsy_findings":"Pulmonary edema. No injuries.",
        "toxicology":"Blood ethanol 0.32 g/dL."}"#,
    )
    .unwrap()
}

pub fn tracer() -> Tracer {
    Tracer::new(Arc::new(FixedClock(1_700_000_000_000)))
}

/// A backend that answers every template with a well-formed reply.
pub fn happy_backend() -> ScriptedBackend {
    let mut b = ScriptedBackend::new(Fallback::Echo);
    b.set_echo_dim(16);
    b.add_default(TemplateId::Tree, TREE);
    b.add_default(TemplateId::Select, "SELECTED: autopsy, tox");
    b.add_rule(TemplateId::Adapt, &["[tox]"], "Interpret the blood ethanol level of 0.32 g/dL");
    b.add_default(TemplateId::Adapt, "Interpret the pulmonary edema without injuries");
    b.add_rule(TemplateId::Router, &["ethanol level"], "1");
    b.add_default(TemplateId::Router, "0");
    b.add_rule(TemplateId::React, &["[Step 1]"], "THOUGHT: enough\nFINAL: lethal range confirmed");
    b.add_default(TemplateId::React, "THOUGHT: check references\nTOOL: kb_lookup\nARGS: {\"query\": \"ethanol lethal level\"}");
    b.add_rule(
        TemplateId::Executor,
        &["ethanol level"],
        "Blood ethanol of 0.32 g/dL lies in the potentially lethal range. It supports acute alcohol poisoning.",
    );
    b.add_default(
        TemplateId::Executor,
        "Pulmonary edema without injuries fits a toxic death. No trauma contributed.",
    );
    b.add_default(TemplateId::Filter, "1: KEEP\n2: KEEP");
    b.add_rule(TemplateId::Tidy, &["lethal range"], "Ethanol 0.32 g/dL is potentially lethal.");
    b.add_default(TemplateId::Tidy, "Edema without trauma suggests toxic death.");
    b.add_default(TemplateId::Audit, "NO_ISSUES");
    b.add_default(TemplateId::Gap, "NONE");
    b.add_default(
        TemplateId::Summary,
        "The decedent had a blood ethanol of 0.32 g/dL with pulmonary edema and no injuries. Death is attributed to acute alcohol poisoning.",
    );
    b.add_default(TemplateId::Revise, "Revised: acute alcohol poisoning, with aspiration excluded.");
    b.add_default(TemplateId::Conclude, "Acute alcohol poisoning");
    b.add_default(TemplateId::Compress, "compressed context");
    b
}

pub fn corpus() -> Vec<ExemplarDocument> {
    (1..=6)
        .map(|i| ExemplarDocument {
            doc_id: format!("E{i}"),
            analysis_text: format!("Exemplar analysis {i} on intoxication and edema patterns, variant {i}."),
            conclusion_text: None,
        })
        .collect()
}

pub fn tool_fixtures() -> Vec<ToolFixture> {
    vec![ToolFixture {
        tool_name: "pubmed_search".into(),
        matcher: FixtureMatch::Any,
        result_text: r#"[{"id":"1","title":"A","abstract":"a"},{"id":"2","title":"B","abstract":"b"},{"id":"3","title":"C","abstract":"c"},{"id":"4","title":"D","abstract":"d"}]"#.into(),
    }]
}

pub fn engine(backend: ScriptedBackend) -> Engine {
    let gateway = Arc::new(Gateway::scripted(backend));
    let t = tracer();
    let kb_docs: Vec<(String, String)> = vec![
        ("tox-handbook".into(), "Ethanol above 0.3 g/dL is potentially lethal. Aspiration is a common complication.".into()),
        ("path-notes".into(), "Pulmonary edema is a nonspecific finding.".into()),
    ];
    let kb = VectorIndex::build(&gateway, &t, &kb_docs, Granularity::Sentence).unwrap();
    let corpus = corpus();
    let docs: Vec<(String, String)> = corpus.iter().map(|d| (d.doc_id.clone(), d.analysis_text.clone())).collect();
    let corpus_index = VectorIndex::build(&gateway, &t, &docs, Granularity::Document).unwrap();
    let tools = ToolRegistry::standard(Arc::new(kb), ToolSource::Offline(Arc::new(ToolFixtures::new(tool_fixtures()))));
    Engine {
        gateway,
        tools: Arc::new(tools),
        corpus_index: Arc::new(corpus_index),
        corpus: Arc::new(corpus),
    }
}

pub fn count<F: Fn(&EventKind) -> bool>(t: &Tracer, f: F) -> usize {
    t.events().iter().filter(|e| f(&e.kind)).count()
}

pub fn model_calls(t: &Tracer, template: TemplateId) -> usize {
    count(t, |k| matches!(k, EventKind::ModelCall { template_id, .. } if *template_id == template))
}
