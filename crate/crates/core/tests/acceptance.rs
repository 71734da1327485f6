//! Prints one line per headline criterion and exits nonzero if any failed.
//! Runs without the test harness so the lines are never captured.

mod common;

use std::process::ExitCode;

use common::Check;

type Criterion = (&'static str, fn() -> Check);

const CRITERIA: [Criterion; 8] = [
    ("MH correctness", common::check_mh),
    ("CRP law", common::check_crp),
    ("EM behavior", common::check_em),
    ("Round-trip fidelity", common::check_roundtrip),
    ("Metric oracles", common::check_metrics),
    ("Targetedness", common::check_targetedness),
    ("Geometry sanity", common::check_geometry),
    ("Full pipeline replay", common::check_pipeline),
];

fn main() -> ExitCode {
    let mut failed = 0;
    for (name, check) in CRITERIA {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(reason) => {
                println!("FAIL {name}: {reason}");
                failed += 1;
            }
        }
    }
    println!("acceptance: {} of {} criteria pass", CRITERIA.len() - failed, CRITERIA.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
