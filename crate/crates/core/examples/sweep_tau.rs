//! Short sweep over the label-replacement weight, writing one run directory
//! per value and a summary CSV.
//!
//! `cargo run --release --example sweep_tau -- [iterations]`

use larvae::config::{DatasetSource, RunConfig};
use larvae::data::Preset;
use larvae::run::sweep;

fn main() -> larvae::Result<()> {
    let iterations = std::env::args().nth(1).unwrap_or_else(|| "500".into());
    let mut cfg = RunConfig::new(DatasetSource::Preset(Preset::DspritesMini));
    cfg.set("iterations", &iterations)?;
    cfg.set("eval_every", &iterations)?;
    cfg.out_dir = std::env::temp_dir().join("larvae-sweep");
    let values: Vec<String> = ["0", "0.1", "0.5", "1", "5", "10"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let summary = sweep(&cfg, "tau", &values, &[], 1)?;
    print!("{}", summary.to_csv());
    println!(
        "written to {}",
        cfg.out_dir.join(summary.csv_name()).display()
    );
    Ok(())
}
