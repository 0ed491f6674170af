//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use larvae::autodiff::{Tape, Tensor};
use larvae::losses::{
    elbo_terms, gaussian_kl, gaussian_nll, label_recon_term, label_replacement_from, tc_mws_term,
    LossParts,
};
use larvae::model::{LatentPartition, Vae};
use larvae::nn::Architecture;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Full negative log density of `N(mean, sigma2 I)` at `x`, built from the
/// constant-free library term.
pub fn full_nll(x: &[f64], mean: &[f64], sigma2: f64) -> f64 {
    gaussian_nll(x, mean, sigma2).unwrap() + 0.5 * x.len() as f64 * (2.0 * PI * sigma2).ln()
}

/// 1-D linear-Gaussian model `z ~ N(0, 1)`, `x | z ~ N(w z + b, s2)` with a
/// Gaussian encoder `q(z | x) = N(m, v)`.
#[derive(Clone, Copy, Debug)]
pub struct LinearGaussian {
    pub w: f64,
    pub b: f64,
    pub s2: f64,
}

impl LinearGaussian {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: 2.0 * gauss(rng),
            b: gauss(rng),
            s2: rng.gen_range(0.05..2.0),
        }
    }

    /// Exact `-log p(x)` from the closed-form marginal `N(b, w^2 + s2)`.
    pub fn neg_log_marginal(&self, x: f64) -> f64 {
        let var = self.w * self.w + self.s2;
        0.5 * (2.0 * PI * var).ln() + (x - self.b).powi(2) / (2.0 * var)
    }

    /// Exact posterior `(mean, variance)` of `z` given `x`.
    pub fn posterior(&self, x: f64) -> (f64, f64) {
        let var = self.w * self.w + self.s2;
        (self.w * (x - self.b) / var, self.s2 / var)
    }

    /// `-ELBO` with the reconstruction expectation taken by three-point
    /// Gauss-Hermite quadrature (exact for the quadratic integrand).
    pub fn neg_elbo(&self, x: f64, m: f64, v: f64) -> f64 {
        let nodes = [
            (-(3f64.sqrt()), 1.0 / 6.0),
            (0.0, 2.0 / 3.0),
            (3f64.sqrt(), 1.0 / 6.0),
        ];
        let recon: f64 = nodes
            .iter()
            .map(|&(e, wt)| {
                let z = m + v.sqrt() * e;
                wt * full_nll(&[x], &[self.w * z + self.b], self.s2)
            })
            .sum();
        recon + gaussian_kl(&[m], v).unwrap()
    }
}

/// Label-replacement toy with a three-state nuisance: prior `pi`, decoder
/// means `f[k]` (already conditioned on the true label), pixel variance
/// `s2` and a categorical encoder `q`.
#[derive(Clone, Debug)]
pub struct ThreeState {
    pub pi: [f64; 3],
    pub q: [f64; 3],
    pub f: [Vec<f64>; 3],
    pub x: Vec<f64>,
    pub s2: f64,
}

fn simplex(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let e: [f64; 3] = std::array::from_fn(|_| -rng.gen_range(1e-6f64..1.0).ln());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

impl ThreeState {
    pub fn random(rng: &mut ChaCha8Rng, pixels: usize) -> Self {
        let vec = |rng: &mut ChaCha8Rng| (0..pixels).map(|_| rng.gen::<f64>()).collect::<Vec<_>>();
        Self {
            pi: simplex(rng),
            q: simplex(rng),
            f: [vec(rng), vec(rng), vec(rng)],
            x: vec(rng),
            s2: rng.gen_range(0.05..1.0),
        }
    }

    /// `E_q[-log p(x | y, z)] + KL(q || pi)`.
    pub fn replacement_loss(&self) -> f64 {
        (0..3)
            .map(|k| {
                let q = self.q[k];
                if q == 0.0 {
                    0.0
                } else {
                    q * (full_nll(&self.x, &self.f[k], self.s2) + (q / self.pi[k]).ln())
                }
            })
            .sum()
    }

    /// `-log sum_k pi_k p(x | y, z_k)` by enumeration.
    pub fn neg_log_likelihood(&self) -> f64 {
        let logs: Vec<f64> = (0..3)
            .map(|k| self.pi[k].ln() - full_nll(&self.x, &self.f[k], self.s2))
            .collect();
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        -(m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln())
    }

    pub fn with_exact_posterior(mut self) -> Self {
        let logs: Vec<f64> = (0..3)
            .map(|k| self.pi[k].ln() - full_nll(&self.x, &self.f[k], self.s2))
            .collect();
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = w.iter().sum();
        self.q = std::array::from_fn(|k| w[k] / s);
        self
    }
}

pub fn tiny_vae(dim_z: usize) -> Vae {
    Vae::new(
        Architecture::Mlp,
        [1, 2, 2],
        LatentPartition::new(2, dim_z).unwrap(),
        0.1,
    )
    .unwrap()
}

/// Every loss part evaluated once on a fixed tiny model and batch.
pub fn tiny_parts(seed: u64) -> LossParts {
    let mut r = rng(seed);
    let vae = tiny_vae(1);
    let params = vae.init_params_with(&mut r);
    let (b, l) = (6, vae.latent_dim());
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let x = tape.constant(Tensor::from_fn([b, 4], |_| r.gen::<f64>()));
    let eps = Tensor::from_fn([b, l], |_| gauss(&mut r));
    let e = elbo_terms(&mut tape, &vae, &bound, x, eps).unwrap();
    let ru = tc_mws_term(&mut tape, e.sample, e.encoded.head, vae.sigma2, 100).unwrap();
    let xl = tape.constant(Tensor::from_fn([b, 4], |_| r.gen::<f64>()));
    let y = tape.constant(Tensor::from_fn([b, 2], |_| r.gen_range(-1.0..1.0)));
    let enc = vae.encode(&mut tape, &bound, xl).unwrap();
    let recon = label_recon_term(&mut tape, enc.mu_y, y).unwrap();
    let eps_z = Tensor::from_fn([b, 1], |_| gauss(&mut r));
    let rep = label_replacement_from(&mut tape, &vae, &bound, xl, &enc, y, Some(eps_z)).unwrap();
    let v = |var| tape.value(var).item();
    LossParts {
        unsup_nll: v(e.nll),
        unsup_kl: v(e.kl),
        ru_term: v(ru),
        recon: v(recon),
        rep: v(rep.total),
    }
}

/// Posterior means and samples whose marginal is a unit-variance bivariate
/// Gaussian with correlation `rho`, for a shared posterior variance `s2`.
pub fn correlated_latents(b: usize, rho: f64, s2: f64, rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
    assert!(rho.abs() <= 1.0 - s2);
    let own = (1.0 - s2 - rho.abs()).sqrt();
    let mut means = vec![0.0; 2 * b];
    let mut lat = vec![0.0; 2 * b];
    for i in 0..b {
        let shared = rho.abs().sqrt() * gauss(rng);
        for j in 0..2 {
            let sign = if j == 1 && rho < 0.0 { -1.0 } else { 1.0 };
            let m = sign * shared + own * gauss(rng);
            means[2 * i + j] = m;
            lat[2 * i + j] = m + s2.sqrt() * gauss(rng);
        }
    }
    (
        Tensor::new([b, 2], lat).unwrap(),
        Tensor::new([b, 2], means).unwrap(),
    )
}

/// Independent posterior means and samples with unit marginal variance.
pub fn factorized_latents(b: usize, d: usize, s2: f64, rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
    let means = Tensor::from_fn([b, d], |_| (1.0 - s2).sqrt() * gauss(rng));
    let lat = Tensor::from_fn([b, d], |i| means.data()[i] + s2.sqrt() * gauss(rng));
    (lat, means)
}

/// Analytic total correlation of a unit-variance bivariate Gaussian.
pub fn bivariate_tc(rho: f64) -> f64 {
    -0.5 * (1.0 - rho * rho).ln()
}

/// Brute-force `sum p log(p / (p1 p2))` of a joint count table.
pub fn table_mi(table: &[Vec<usize>]) -> f64 {
    let n: usize = table.iter().flatten().sum();
    let n = n as f64;
    let rows: Vec<f64> = table
        .iter()
        .map(|r| r.iter().sum::<usize>() as f64 / n)
        .collect();
    let cols: Vec<f64> = (0..table[0].len())
        .map(|j| table.iter().map(|r| r[j]).sum::<usize>() as f64 / n)
        .collect();
    let mut mi = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            if c > 0 {
                let p = c as f64 / n;
                mi += p * (p / (rows[i] * cols[j])).ln();
            }
        }
    }
    mi
}

/// Expands a count table into paired samples `(row, col)`.
pub fn table_samples(table: &[Vec<usize>]) -> (Vec<usize>, Vec<usize>) {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, r) in table.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            for _ in 0..c {
                a.push(i);
                b.push(j);
            }
        }
    }
    (a, b)
}
