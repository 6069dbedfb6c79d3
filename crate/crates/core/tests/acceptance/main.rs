//! Acceptance criteria, one line each. Run a subset by passing criterion
//! numbers: `cargo test --test acceptance -- 1 4`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

mod accountant;
mod canary_study;
mod classification;
mod clipping;
mod degeneracy;
mod entity_sets;
mod generation;
mod gradients;
mod matcher;
mod nucleus;
mod oracle;
mod paper_epsilon;
mod report;
mod shared;

type Outcome = Result<String, String>;

/// Number, name, check, and the runtime limit in seconds where one is set.
type Criterion = (u32, &'static str, fn() -> Outcome, Option<f64>);

const CRITERIA: &[Criterion] = &[
    (1, "gradient correctness", gradients::check, Some(60.0)),
    (2, "clipping exactness", clipping::check, None),
    (3, "dp degeneracy", degeneracy::check, None),
    (4, "accountant oracle", accountant::check, Some(300.0)),
    (5, "paper epsilon", paper_epsilon::check, None),
    (6, "nucleus correctness", nucleus::check, None),
    (7, "generation contracts", generation::check, Some(600.0)),
    (8, "entity-set algebra", entity_sets::check, None),
    (9, "matcher equivalence", matcher::check, None),
    (10, "canary study", canary_study::check, Some(2700.0)),
    (11, "classification sanity", classification::check, None),
    (12, "report fidelity", report::check, None),
];

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for &(n, name, f, limit) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        let outcome = match (outcome, limit) {
            (Ok(d), Some(l)) if secs > l => Err(format!("over the {l:.0}s limit; {d}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name} ({secs:.1}s): {detail}");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
