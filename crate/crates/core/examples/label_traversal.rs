//! Trains briefly, then decodes a traversal of every label dimension for one
//! item and writes the cells and strips as images.
//!
//! `cargo run --release --example label_traversal -- [iterations] [item]`

use larvae::config::{DatasetSource, RunConfig};
use larvae::data::Preset;
use larvae::run::{train_run, traverse_to_dir, CHECKPOINT_FILE};

fn main() -> larvae::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("integer argument"))
        .collect();
    let iterations = args.first().copied().unwrap_or(2000);
    let item = args.get(1).copied().unwrap_or(100);
    let mut cfg = RunConfig::new(DatasetSource::Preset(Preset::DspritesMini));
    cfg.set("iterations", &iterations.to_string())?;
    cfg.set("eval_every", &iterations.to_string())?;
    cfg.out_dir = std::env::temp_dir().join("larvae-traversal");
    train_run(&cfg)?;
    let d = cfg.dataset.load()?;
    let ckpt = cfg.out_dir.join(CHECKPOINT_FILE);
    for dim in 0..d.num_factors() {
        let (t, paths) = traverse_to_dir(&ckpt, &d, item, dim, 6, &cfg.out_dir.join("traversal"))?;
        let values: Vec<String> = t.inputs.iter().map(|v| format!("{:+.2}", v[dim])).collect();
        println!(
            "{:<6} [{}] -> {}",
            d.spec.factors[dim].name,
            values.join(" "),
            paths.last().expect("strip").display()
        );
    }
    Ok(())
}
