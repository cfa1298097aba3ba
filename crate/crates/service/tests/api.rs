mod common;

use common::*;
use serde_json::json;

fn server() -> (tempfile::TempDir, Server) {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(reference_config(dir.path()));
    (dir, server)
}

fn case_text(id: &str) -> String {
    String::from_utf8(case_bytes(id)).unwrap()
}

#[test]
fn cases_are_stored_idempotently() {
    let (_d, s) = server();
    let r = post(&s.url("/cases"), &case_text("C01"));
    assert_eq!(r.status, 201);
    assert_eq!(r.json(), json!({"case_id": "C01", "created": true}));
    assert_eq!(post(&s.url("/cases"), &case_text("C01")).status, 200);

    let mut changed: serde_json::Value = serde_json::from_str(&case_text("C01")).unwrap();
    changed["toxicology"] = "Negative.".into();
    let r = post(&s.url("/cases"), &changed.to_string());
    assert_eq!(r.status, 409);
    assert_eq!(r.json()["type"], "urn:feat:problem:conflict");

    let got = get(&s.url("/cases/C01")).json();
    assert_eq!(got["toxicology"], "Femoral blood ethanol 0.41 g/dL. No other drugs detected.");
}

#[test]
fn errors_are_problem_documents() {
    let (_d, s) = server();
    let r = get(&s.url("/cases/nope"));
    assert_eq!(r.status, 404);
    assert!(r.content_type.starts_with("application/problem+json"));
    let p = r.json();
    assert_eq!(p["type"], "urn:feat:problem:not-found");
    assert_eq!(p["status"], 404);

    assert_eq!(get(&s.url("/cases/..secret")).json()["type"], "urn:feat:problem:invalid-id");
    assert_eq!(post(&s.url("/cases"), "{\"case_id\": 3}").status, 422);
    assert_eq!(get(&s.url("/no/such/route")).status, 404);

    post(&s.url("/cases"), &case_text("C01"));
    let r = post(&s.url("/runs"), r#"{"case_id":"C01","config":{"replan_kap":1}}"#);
    assert_eq!(r.status, 422, "{}", r.body);
    assert_eq!(post(&s.url("/runs"), r#"{"case_id":"C01","extra":1}"#).status, 422);
    assert_eq!(post(&s.url("/runs"), r#"{"case_id":"C99"}"#).status, 404);
    assert_eq!(get(&s.url("/runs/0000000000000000")).status, 404);
}

#[test]
fn run_lifecycle_and_trace() {
    let (_d, s) = server();
    post(&s.url("/cases"), &case_text("C06"));
    let r = agent()
        .post(&s.url("/runs"))
        .header("content-type", "application/json")
        .send(r#"{"case_id":"C06","nonce":"golden"}"#)
        .unwrap();
    assert_eq!(r.status().as_u16(), 202);
    let location = r.headers().get("location").unwrap().to_str().unwrap().to_string();
    let body: serde_json::Value = serde_json::from_str(&r.into_body().read_to_string().unwrap()).unwrap();
    let run_id = body["run_id"].as_str().unwrap().to_string();
    assert_eq!(location, format!("/runs/{run_id}"));
    assert_eq!(body["config"]["headless"], true);

    // follow streams until the worker is done
    let followed = get(&s.url(&format!("/runs/{run_id}/trace?follow=true")));
    assert_eq!(followed.content_type, "application/x-ndjson");
    let golden = std::fs::read_to_string(golden_path("C06")).unwrap();
    assert_eq!(followed.body, golden);

    let view = wait_settled(&s, &run_id);
    assert_eq!(view["status"], "completed");
    assert_eq!(view["events"], golden.lines().count());
    assert_eq!(view["draft_version"], 1);

    let tail = agent().get(&s.url(&format!("/runs/{run_id}/trace?offset=40"))).call().unwrap();
    assert_eq!(tail.headers().get("x-next-offset").unwrap(), &golden.lines().count().to_string());
    let want: String = golden.lines().skip(40).map(|l| format!("{l}\n")).collect();
    assert_eq!(tail.into_body().read_to_string().unwrap(), want);

    // the same request again is a conflict: run ids are content addressed
    assert_eq!(post(&s.url("/runs"), r#"{"case_id":"C06","nonce":"golden"}"#).status, 409);
}

#[test]
fn review_endpoints_reject_misuse() {
    let (_d, s) = server();
    post(&s.url("/cases"), &case_text("C03"));
    let run_id = post(&s.url("/runs"), r#"{"case_id":"C03","config":{"headless":false}}"#).json()["run_id"]
        .as_str()
        .unwrap()
        .to_string();
    assert_eq!(wait_settled(&s, &run_id)["status"], "awaiting_review");

    let url = s.url(&format!("/runs/{run_id}/critiques"));
    let blank = post(&url, r#"{"author":"a","target_version":1,"text":"   "}"#);
    assert_eq!(blank.status, 422);
    assert_eq!(post(&url, r#"{"critiques":[]}"#).status, 422);
    assert_eq!(post(&url, "not json").status, 422);

    let stale = post(&url, r#"{"author":"a","target_version":4,"text":"x"}"#).json();
    assert_eq!(stale["target_version"], 4);
    assert_eq!(stale["current_version"], 1);

    let batch = post(
        &url,
        r#"{"critiques":[{"author":"a","target_version":1,"text":"one"},{"author":"b","target_version":1,"text":"two"}]}"#,
    );
    assert_eq!(batch.status, 201);
    assert_eq!(batch.json()["version"], 2);
    let report = get(&s.url(&format!("/runs/{run_id}/report"))).json();
    assert_eq!(report["revision_trail"], json!([{"version": 2, "critique_ids": ["c1", "c2"]}]));

    assert_eq!(post(&s.url(&format!("/runs/{run_id}/approve")), r#"{"who":"x"}"#).status, 422);
    let done = post(&s.url(&format!("/runs/{run_id}/approve")), "").json();
    assert_eq!(done["long_form"]["version"], 2);
    assert!(done["approved_by"].is_null());
}

#[test]
fn review_state_survives_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let run_id = {
        let s = Server::start(reference_config(dir.path()));
        post(&s.url("/cases"), &case_text("C04"));
        let id = post(&s.url("/runs"), r#"{"case_id":"C04","config":{"headless":false}}"#).json()["run_id"]
            .as_str()
            .unwrap()
            .to_string();
        wait_settled(&s, &id);
        let r = post(&s.url(&format!("/runs/{id}/critiques")), r#"{"author":"a","target_version":1,"text":"cite the level"}"#);
        assert_eq!(r.status, 201);
        id
    };
    let s = Server::start(reference_config(dir.path()));
    let view = get(&s.url(&format!("/runs/{run_id}"))).json();
    assert_eq!(view["status"], "awaiting_review");
    assert_eq!(view["draft_version"], 2);
    let stale = post(&s.url(&format!("/runs/{run_id}/critiques")), r#"{"author":"a","target_version":1,"text":"again"}"#);
    assert_eq!(stale.status, 409);
    let report = post(&s.url(&format!("/runs/{run_id}/approve")), "").json();
    assert_eq!(report["long_form"]["version"], 2);
}

#[test]
fn bearer_token_guards_everything_but_health() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = reference_config(dir.path());
    cfg.api_token = Some("s3cret".into());
    let s = Server::start(cfg);
    assert_eq!(get(&s.url("/health")).status, 200);
    let denied = get(&s.url("/cases/C01"));
    assert_eq!(denied.status, 401);
    assert_eq!(denied.json()["type"], "urn:feat:problem:unauthorized");
    let wrong = agent().get(&s.url("/cases/C01")).header("authorization", "Bearer nope").call().unwrap();
    assert_eq!(wrong.status().as_u16(), 401);
    let ok = agent()
        .post(&s.url("/cases"))
        .header("authorization", "Bearer s3cret")
        .header("content-type", "application/json")
        .send(case_text("C01"))
        .unwrap();
    assert_eq!(ok.status().as_u16(), 201);
}
