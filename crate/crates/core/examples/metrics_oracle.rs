//! Scores an oracle encoder (the normalized labels themselves) and a pure
//! noise encoder on dsprites-mini.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use larvae::autodiff::Tensor;
use larvae::data::Preset;
use larvae::train::{evaluate_latents, EvalConfig};

fn main() -> larvae::Result<()> {
    let d = Preset::DspritesMini.generate();
    let (n, k) = (d.len(), d.num_factors());
    let cfg = EvalConfig::default();

    let oracle = evaluate_latents(&d.labels, k, &d, &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise = Tensor::from_fn([n, k], |_| StandardNormal.sample(&mut rng));
    let noisy = evaluate_latents(&noise, k, &d, &cfg)?;

    println!("encoder       mig        l2   fvae_score");
    for (name, r) in [("oracle", &oracle), ("noise", &noisy)] {
        println!(
            "{name:<8} {:>8.4} {:>9.4} {:>12.3}",
            r.mig, r.l2, r.factorvae_score
        );
    }
    let names: Vec<String> = d.spec.factors.iter().map(|f| f.name.clone()).collect();
    print!(
        "\noracle mutual information (nats)\n{}",
        oracle.mi_matrix_csv(&names)
    );
    Ok(())
}
