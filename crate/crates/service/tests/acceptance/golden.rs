use std::time::{Duration, Instant};

use feat_core::pipeline::RunStatus;
use feat_service::{RunRequest, Service};

use crate::common::{case_bytes, golden_path, reference_config, CASES};
use crate::{ensure, Outcome};

const REPEATS: usize = 5;

/// Log bytes and serialized final report of every reference case.
fn run_all() -> Result<Vec<(Vec<u8>, String)>, String> {
    let dir = tempfile::tempdir().unwrap();
    let service = Service::new(reference_config(dir.path())).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for case in CASES {
        service.put_case(&case_bytes(case)).map_err(|e| e.to_string())?;
        let req = RunRequest {
            case_id: case.into(),
            config: None,
            nonce: Some("golden".into()),
        };
        let state = service.run(&req).map_err(|e| format!("{case}: {e}"))?;
        ensure!(state.status == RunStatus::Completed, "{case} ended {:?}: {:?}", state.status, state.error);
        let log = std::fs::read(service.store().log_path(&state.run_id)).unwrap();
        out.push((log, serde_json::to_string(&state.report).unwrap()));
    }
    Ok(out)
}

fn first_difference(a: &[u8], b: &[u8]) -> String {
    let (a, b) = (String::from_utf8_lossy(a), String::from_utf8_lossy(b));
    match a.lines().zip(b.lines()).position(|(x, y)| x != y) {
        Some(i) => format!("line {}", i + 1),
        None => format!("lengths {} vs {} lines", a.lines().count(), b.lines().count()),
    }
}

pub fn check() -> Outcome {
    let started = Instant::now();
    let first = run_all()?;
    for rep in 1..REPEATS {
        let again = run_all()?;
        for (i, case) in CASES.iter().enumerate() {
            ensure!(again[i].0 == first[i].0, "{case}: log of run {} differs at {}", rep + 1, first_difference(&first[i].0, &again[i].0));
            ensure!(again[i].1 == first[i].1, "{case}: final report of run {} differs", rep + 1);
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "{REPEATS} repetitions took {:.2}s", elapsed.as_secs_f64());

    let update = std::env::var_os("FEAT_UPDATE_GOLDEN").is_some_and(|v| v == "1");
    for (case, (log, _)) in CASES.iter().zip(&first) {
        let path = golden_path(case);
        if update {
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            std::fs::write(&path, log).unwrap();
            continue;
        }
        let want = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure!(log == &want, "{case}: log differs from the golden file at {}", first_difference(&want, log));
    }
    let events: usize = first.iter().map(|(l, _)| l.iter().filter(|b| **b == b'\n').count()).sum();
    Ok(format!(
        "{} cases x {REPEATS} runs byte-identical ({events} events per pass){} in {:.2}s",
        CASES.len(),
        if update { ", golden logs rewritten" } else { ", equal to golden logs" },
        elapsed.as_secs_f64()
    ))
}
