//! Runs the full finite-difference suite and prints the per-check table.

use std::time::Instant;

use larvae::checks::{run_all, DEFAULT_INSTANCES};

fn main() -> larvae::Result<()> {
    let start = Instant::now();
    let report = run_all(DEFAULT_INSTANCES, 0, None)?;
    print!("{}", report.to_text());
    println!(
        "{} checks in {:.1}s",
        report.results.len(),
        start.elapsed().as_secs_f64()
    );
    if !report.passed() {
        eprintln!("failed: {}", report.failures().join(", "));
        std::process::exit(1);
    }
    Ok(())
}
