//! Renders both preset datasets, round-trips them through the binary format
//! and writes a few items as images.
//!
//! `cargo run --release --example gen_dataset -- [out_dir]`

use std::path::PathBuf;

use larvae::data::{FactorDataset, Preset};
use larvae::image::{pnm_extension, write_pnm};

fn main() -> larvae::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("larvae-data"));
    std::fs::create_dir_all(&out).map_err(|e| larvae::Error::Invalid(e.to_string()))?;
    for preset in [Preset::DspritesMini, Preset::ColorsMini] {
        let d = preset.generate();
        let path = out.join(format!("{preset}.bin"));
        d.save(&path)?;
        let back = FactorDataset::load(&path)?;
        assert_eq!(back.images, d.images);
        println!(
            "{preset}: {} items, image {:?}",
            d.len(),
            d.spec.image_shape
        );
        for f in &d.spec.factors {
            println!("  {:<14} {} values {:?}", f.name, f.values.len(), f.values);
        }
        let shape = d.spec.image_shape;
        for i in [0, d.len() / 2, d.len() - 1] {
            let p = out.join(format!("{preset}_{i}.{}", pnm_extension(shape[0])));
            write_pnm(&p, shape, d.image(i))?;
            println!("  item {i} labels {:?} -> {}", d.label(i), p.display());
        }
    }
    Ok(())
}
