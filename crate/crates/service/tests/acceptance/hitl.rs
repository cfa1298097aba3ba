use std::sync::Arc;

use feat_core::gateway::{Fallback, Gateway, ScriptedBackend};
use feat_core::global::{conclude, DraftAnalysis, DraftChain, GlobalError};
use feat_core::trace::{FixedClock, Tracer};
use serde_json::{json, Value};

use crate::common::{case_bytes, get, post, reference_config, wait_settled, Server};
use crate::{ensure, Outcome};

fn log_len(server: &Server, run_id: &str) -> usize {
    get(&server.url(&format!("/runs/{run_id}"))).json()["events"].as_u64().unwrap() as usize
}

fn critique(server: &Server, run_id: &str, target: u32, text: &str) -> crate::common::Reply {
    let body = json!({"author": "dr-a", "target_version": target, "text": text}).to_string();
    post(&server.url(&format!("/runs/{run_id}/critiques")), &body)
}

fn start_run(server: &Server, case: &str, config: Value) -> Result<String, String> {
    let r = post(&server.url("/cases"), std::str::from_utf8(&case_bytes(case)).unwrap());
    ensure!(r.status == 201 || r.status == 200, "POST /cases {case}: {} {}", r.status, r.body);
    let r = post(&server.url("/runs"), &json!({"case_id": case, "config": config, "nonce": "hitl"}).to_string());
    ensure!(r.status == 202, "POST /runs {case}: {} {}", r.status, r.body);
    Ok(r.json()["run_id"].as_str().unwrap().to_string())
}

pub fn check() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(reference_config(dir.path()));

    let run_id = start_run(&server, "C01", json!({"headless": false}))?;
    let view = wait_settled(&server, &run_id);
    ensure!(view["status"] == "awaiting_review", "reviewed run settled as {}", view["status"]);
    let report = get(&server.url(&format!("/runs/{run_id}/report"))).json();
    ensure!(report["final_report"].is_null(), "a final report exists before approval");
    ensure!(report["current"]["version"] == 1, "first draft is version {}", report["current"]["version"]);

    // the conclusion step itself refuses a draft nobody approved
    let chain = DraftChain::new(serde_json::from_value::<DraftAnalysis>(report["current"].clone()).unwrap());
    let t = Tracer::new(Arc::new(FixedClock(0)));
    let refused = conclude(&Gateway::scripted(ScriptedBackend::new(Fallback::Error)), &t, &chain);
    ensure!(matches!(refused, Err(GlobalError::NotApproved(1))), "conclude on an unapproved draft gave {refused:?}");
    ensure!(t.is_empty(), "refused conclusion still called the model");

    for stale in [0, 2] {
        let before = log_len(&server, &run_id);
        let r = critique(&server, &run_id, stale, "consider aspiration");
        ensure!(r.status == 409, "critique of v{stale} against v1: {} {}", r.status, r.body);
        ensure!(r.json()["type"] == "urn:feat:problem:stale-version", "stale critique problem {}", r.body);
        ensure!(r.content_type.starts_with("application/problem+json"), "content type {}", r.content_type);
        ensure!(log_len(&server, &run_id) == before, "a stale critique was logged");
    }

    for (target, text) in [(1, "consider aspiration"), (2, "state the ethanol threshold")] {
        let r = critique(&server, &run_id, target, text);
        ensure!(r.status == 201, "critique of v{target}: {} {}", r.status, r.body);
        ensure!(r.json()["version"] == target + 1, "critique of v{target} produced {}", r.body);
    }
    let r = critique(&server, &run_id, 2, "late comment on v2");
    ensure!(r.status == 409, "critique of superseded v2: {}", r.status);

    let report = get(&server.url(&format!("/runs/{run_id}/report"))).json();
    let versions: Vec<u64> = report["versions"].as_array().unwrap().iter().map(|v| v["version"].as_u64().unwrap()).collect();
    ensure!(versions == [1, 2, 3], "version chain {versions:?}");
    let trail: Vec<u64> = report["revision_trail"].as_array().unwrap().iter().map(|r| r["version"].as_u64().unwrap()).collect();
    ensure!(trail == [2, 3], "revision trail {trail:?}");
    ensure!(report["final_report"].is_null(), "critiques produced a final report");

    let approved = post(&server.url(&format!("/runs/{run_id}/approve")), r#"{"reviewer":"dr-a"}"#);
    ensure!(approved.status == 200, "approve: {} {}", approved.status, approved.body);
    let final_report = approved.json();
    ensure!(final_report["long_form"]["version"] == 3, "approved version {}", final_report["long_form"]["version"]);
    ensure!(final_report["approved_by"] == "dr-a", "approved by {}", final_report["approved_by"]);
    let again = post(&server.url(&format!("/runs/{run_id}/approve")), "");
    ensure!(again.status == 200 && again.json() == final_report, "second approve: {} {}", again.status, again.body);
    let r = critique(&server, &run_id, 3, "after the fact");
    ensure!(r.status == 409, "critique after approval: {}", r.status);
    let view = get(&server.url(&format!("/runs/{run_id}"))).json();
    ensure!(view["status"] == "completed", "approved run is {}", view["status"]);

    let headless = start_run(&server, "C02", json!({}))?;
    let view = wait_settled(&server, &headless);
    ensure!(view["status"] == "completed", "headless run settled as {}", view["status"]);
    let report = get(&server.url(&format!("/runs/{headless}/report"))).json();
    ensure!(report["approval"]["auto"] == true, "headless approval {}", report["approval"]);
    ensure!(report["final_report"]["long_form"]["version"] == 1, "headless report {}", report["final_report"]);

    Ok("stale critiques rejected with 409 and nothing logged, chain v1-v2-v3 contiguous, conclude refuses unapproved drafts, headless auto-approves".into())
}
