//! Acceptance suite. Prints one line per criterion and exits non-zero if any
//! criterion fails.
//!
//! Criteria 5 and 6 train real models and take hours on a single core; they
//! run only when `WSOCC_ACCEPTANCE_FULL=1` is set and are reported as SKIP
//! otherwise. `WSOCC_ACCEPTANCE_ONLY=2,8` runs a subset.

mod conservation;
mod determinism;
mod formulas;
mod gradients;
mod overfit;
mod protocol;
mod trends;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

type Check = fn() -> Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    check: Check,
    long: bool,
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, name: "formula fidelity", check: formulas::run, long: false },
    Criterion { id: 2, name: "gradient correctness", check: gradients::run, long: false },
    Criterion { id: 3, name: "compositing conservation", check: conservation::run, long: false },
    Criterion { id: 4, name: "oracle equivalence", check: oracles::run, long: false },
    Criterion { id: 5, name: "overfit sanity", check: overfit::run, long: true },
    Criterion { id: 6, name: "trend reproduction", check: trends::run, long: true },
    Criterion { id: 7, name: "protocol fidelity", check: protocol::run, long: false },
    Criterion { id: 8, name: "determinism", check: determinism::run, long: false },
];

fn main() {
    let full = std::env::var("WSOCC_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let only: Option<Vec<u32>> = std::env::var("WSOCC_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for c in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&c.id)) {
            continue;
        }
        if c.long && !full {
            println!("criterion {} [SKIP] {}: long-running, set WSOCC_ACCEPTANCE_FULL=1", c.id, c.name);
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} [PASS] {} ({secs:.1}s): {detail}", c.id, c.name),
            Err(detail) => {
                failed += 1;
                println!("criterion {} [FAIL] {} ({secs:.1}s): {detail}", c.id, c.name);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
