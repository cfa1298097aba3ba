//! Exit gate: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Set FEAT_UPDATE_GOLDEN=1 to re-pin the reference logs.

#[path = "../common/mod.rs"]
mod common;

mod consensus;
mod crash;
mod golden;
mod hitl;
mod memory;
mod metrics;
mod planner;
mod react;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

pub type Outcome = Result<String, String>;

/// Returns `Err` with a formatted message unless `cond` holds.
#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

type Check = fn() -> Outcome;

const CRITERIA: [(&str, Check); 8] = [
    ("golden determinism", golden::check),
    ("consensus retrieval oracle", consensus::check),
    ("memory invariants", memory::check),
    ("react bounds", react::check),
    ("planner bounds", planner::check),
    ("metric oracles", metrics::check),
    ("crash recovery", crash::check),
    ("review workflow over http", hitl::check),
];

fn main() -> ExitCode {
    let mut failed = 0;
    for (i, (name, check)) in CRITERIA.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name} ({secs:.2}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name} ({secs:.2}s): {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", CRITERIA.len() - failed, CRITERIA.len());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
