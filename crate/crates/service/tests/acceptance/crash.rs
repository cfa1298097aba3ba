use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use feat_core::trace::Event;

use crate::common::{case_bytes, get, golden_path, post, reference_dir};
use crate::{ensure, Outcome};

/// A `feat serve` child process, killed on drop.
struct Served {
    child: Child,
    base: String,
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn serve(data: &Path, latency_ms: u64) -> Result<Served, String> {
    let mut child = Command::new(env!("CARGO_BIN_EXE_feat"))
        .arg("--config")
        .arg(reference_dir().join("feat.toml"))
        .arg("--data-dir")
        .arg(data)
        .args(["serve", "--port", "0"])
        .env("FEAT_SIMULATED_LATENCY_MS", latency_ms.to_string())
        .env("RUST_LOG", "error")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| format!("spawn feat: {e}"))?;
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).map_err(|e| e.to_string())?;
    let base = line
        .trim()
        .strip_prefix("listening on ")
        .ok_or_else(|| format!("unexpected first line {line:?}"))?
        .to_string();
    Ok(Served { child, base })
}

fn complete_lines(bytes: &[u8]) -> &[u8] {
    match bytes.iter().rposition(|b| *b == b'\n') {
        Some(i) => &bytes[..=i],
        None => &[],
    }
}

pub fn check() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let golden = std::fs::read(golden_path("C12")).map_err(|e| format!("golden log: {e}"))?;

    let mut server = serve(dir.path(), 25)?;
    let case = post(&format!("{}/cases", server.base), std::str::from_utf8(&case_bytes("C12")).unwrap());
    ensure!(case.status == 201, "POST /cases: {} {}", case.status, case.body);
    let run = post(&format!("{}/runs", server.base), r#"{"case_id":"C12","nonce":"golden"}"#);
    ensure!(run.status == 202, "POST /runs: {} {}", run.status, run.body);
    let run_id = run.json()["run_id"].as_str().unwrap().to_string();
    let log_path = dir.path().join("runs").join(&run_id).join("events.ndjson");

    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        let lines = std::fs::read(&log_path).map(|b| b.iter().filter(|c| **c == b'\n').count()).unwrap_or(0);
        if lines >= 20 {
            break;
        }
        ensure!(Instant::now() < deadline, "run wrote only {lines} events in 20s");
        std::thread::sleep(Duration::from_millis(5));
    }
    server.child.kill().map_err(|e| e.to_string())?;
    server.child.wait().map_err(|e| e.to_string())?;
    drop(server);

    let crashed = std::fs::read(&log_path).unwrap();
    ensure!(crashed.len() < golden.len(), "the run finished before the kill ({} bytes)", crashed.len());
    ensure!(golden.starts_with(&crashed), "the log on disk is not a prefix of the golden log");
    let kept = complete_lines(&crashed).to_vec();
    let kept_events = kept.iter().filter(|b| **b == b'\n').count();

    let server = serve(dir.path(), 0)?;
    let view = get(&format!("{}/runs/{run_id}", server.base));
    ensure!(view.status == 200, "GET run after restart: {} {}", view.status, view.body);
    let view = view.json();
    ensure!(view["status"] == "failed", "restarted run reports {}", view["status"]);
    ensure!(!view["executing"].as_bool().unwrap(), "restarted run is still executing");
    ensure!(view["error"].as_str().unwrap_or_default().contains("interrupted"), "error {}", view["error"]);

    let after = std::fs::read(&log_path).unwrap();
    ensure!(after.starts_with(&kept), "recovery rewrote records written before the crash");
    ensure!(after.ends_with(b"\n"), "recovered log ends in a partial record");
    let text = std::str::from_utf8(&after).map_err(|e| e.to_string())?;
    let mut last = None;
    for (i, line) in text.lines().enumerate() {
        let e = Event::parse_line(line).map_err(|e| format!("record {} does not parse: {e}", i + 1))?;
        ensure!(e.seq == i as u64, "record {} has seq {}", i + 1, e.seq);
        last = Some(e);
    }
    let last = serde_json::to_value(last.unwrap()).unwrap();
    ensure!(last["kind"] == "run_failed", "last record is {}", last["kind"]);
    let trace = get(&format!("{}/runs/{run_id}/trace", server.base));
    ensure!(trace.body.as_bytes() == after.as_slice(), "trace endpoint differs from the log file");

    // a second restart leaves the closed run alone
    drop(server);
    let server = serve(dir.path(), 0)?;
    // requests are only served once startup recovery is done
    ensure!(get(&format!("{}/health", server.base)).status == 200, "health check failed");
    ensure!(std::fs::read(&log_path).unwrap() == after, "a second recovery changed the log");

    Ok(format!(
        "killed after {} of {} golden bytes (strict prefix); restart closed the run as failed, {kept_events} records kept, {} total, all parse",
        crashed.len(),
        golden.len(),
        text.lines().count()
    ))
}
