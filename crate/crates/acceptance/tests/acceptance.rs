//! Runs every acceptance criterion and prints one line per criterion.

use std::process::ExitCode;

use dnpsolve_verify::{run, CRITERIA};

fn main() -> ExitCode {
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    println!("\nacceptance criteria");
    for (id, ..) in CRITERIA {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let outcome = run(id);
        println!("{outcome}");
        if !outcome.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("all criteria passed\n");
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}\n");
        ExitCode::FAILURE
    }
}
