//! Paired comparison of label replacement (tau = 1) against the same model
//! trained without it (tau = 0), over a few seeds.
//!
//! `cargo run --release --example compare_baseline -- [iterations] [seeds]`

use larvae::data::Preset;
use larvae::train::{run_pool, train, TrainConfig};

fn main() -> larvae::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("integer argument"))
        .collect();
    let iterations = args.first().copied().unwrap_or(2000);
    let seeds = args.get(1).copied().unwrap_or(3) as u64;
    let d = Preset::DspritesMini.generate();
    println!("seed  mig(tau=0)  mig(tau=1)   l2(tau=0)   l2(tau=1)");
    for seed in 0..seeds {
        let mut row = Vec::new();
        for tau in [0.0, 1.0] {
            let mut cfg = TrainConfig {
                iterations,
                eval_every: iterations,
                seed,
                ..TrainConfig::default()
            };
            cfg.loss.tau = tau;
            let pool = run_pool(&d, &cfg)?;
            row.push(train(&d, Some(&pool), &cfg)?.final_report);
        }
        println!(
            "{seed:>4} {:>11.4} {:>11.4} {:>11.4} {:>11.4}",
            row[0].mig, row[1].mig, row[0].l2, row[1].l2
        );
    }
    Ok(())
}
