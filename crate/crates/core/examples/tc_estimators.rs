//! Total-correlation estimators on synthetic latents: the minibatch-weighted
//! estimate against the closed form for correlated Gaussians, and the
//! discriminator on independent versus duplicated dimensions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use larvae::autodiff::Tensor;
use larvae::losses::{permute_dims, tc_estimate_mws, Discriminator};
use larvae::optim::AdamState;

const SIGMA2: f64 = 0.05;

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Posterior means and samples whose marginal is a unit-variance bivariate
/// Gaussian with correlation `rho`.
fn correlated(b: usize, rho: f64, rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
    let mut means = vec![0.0; 2 * b];
    let mut lat = vec![0.0; 2 * b];
    let own = (1.0 - SIGMA2 - rho).sqrt();
    for i in 0..b {
        let shared = rho.sqrt() * gauss(rng);
        for j in 0..2 {
            let m = shared + own * gauss(rng);
            means[2 * i + j] = m;
            lat[2 * i + j] = m + SIGMA2.sqrt() * gauss(rng);
        }
    }
    (
        Tensor::new([b, 2], lat).unwrap(),
        Tensor::new([b, 2], means).unwrap(),
    )
}

fn main() -> larvae::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    println!(" rho  estimate  closed form");
    for rho in [0.0, 0.5, 0.9] {
        let b = 1024;
        let mean = (0..10)
            .map(|_| {
                let (l, m) = correlated(b, rho, &mut rng);
                tc_estimate_mws(&l, &m, SIGMA2, b).unwrap()
            })
            .sum::<f64>()
            / 10.0;
        println!(
            "{rho:>4} {mean:>9.4} {:>12.4}",
            -0.5 * (1.0 - rho * rho).ln()
        );
    }

    let disc = Discriminator::new(2);
    for (name, copy) in [("independent", false), ("duplicated", true)] {
        let mut params = disc.init_params(&mut rng);
        let mut adam = AdamState::new(&params);
        let batch = |rng: &mut ChaCha8Rng| Tensor::from_fn([256, 2], |_| gauss(rng));
        let dup = |t: Tensor| {
            let mut t = t;
            for row in t.data_mut().chunks_exact_mut(2) {
                row[1] = row[0];
            }
            t
        };
        for _ in 0..500 {
            let mut j = batch(&mut rng);
            if copy {
                j = dup(j);
            }
            let p = permute_dims(&j, &mut rng)?;
            disc.step(&mut params, &mut adam, &j, &p, 1e-3)?;
        }
        let mut j = batch(&mut rng);
        if copy {
            j = dup(j);
        }
        let p = permute_dims(&j, &mut rng)?;
        println!(
            "discriminator on {name} dimensions: accuracy {:.3}",
            disc.accuracy(&params, &j, &p)?
        );
    }
    Ok(())
}
