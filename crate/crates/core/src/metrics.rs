//! Disentanglement metrics over encoder means: mutual information gap,
//! label distance and the majority-vote factor classifier score.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::autodiff::Tensor;
use crate::data::FactorDataset;
use crate::error::{Error, Result};

pub const DEFAULT_MIG_BINS: usize = 20;
pub const DEFAULT_FVAE_VOTES: usize = 800;
pub const DEFAULT_FVAE_BATCH: usize = 64;
/// Latent dimensions with a smaller full-dataset std are treated as collapsed.
pub const COLLAPSED_STD: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub mig: f64,
    pub l2: f64,
    pub factorvae_score: f64,
    /// `[latent][factor]`, nats.
    pub mi_matrix: Vec<Vec<f64>>,
    /// Per-factor entropy, nats.
    pub entropies: Vec<f64>,
}

impl MetricsReport {
    /// `metric,value` rows for the three scalar metrics.
    pub fn to_csv(&self) -> String {
        format!(
            "metric,value\nmig,{}\nl2,{}\nfactorvae_score,{}\n",
            self.mig, self.l2, self.factorvae_score
        )
    }

    /// One row per latent, one column per factor.
    pub fn mi_matrix_csv(&self, factor_names: &[String]) -> String {
        let mut out = format!("latent,{}\n", factor_names.join(","));
        for (j, row) in self.mi_matrix.iter().enumerate() {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("{j},{}\n", vals.join(",")));
        }
        out
    }

    /// Writes `metrics.csv` and `mi_matrix.csv` into `dir`.
    pub fn write(&self, dir: &Path, factor_names: &[String]) -> Result<()> {
        let m = dir.join("metrics.csv");
        fs::write(&m, self.to_csv()).map_err(|e| Error::io(&m, e))?;
        let mi = dir.join("mi_matrix.csv");
        fs::write(&mi, self.mi_matrix_csv(factor_names)).map_err(|e| Error::io(&mi, e))
    }
}

/// Equal-width bin index over the observed range; a constant input maps to bin 0.
pub fn discretize(values: &[f64], bins: usize) -> Vec<usize> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0; values.len()];
    }
    let width = hi - lo;
    values
        .iter()
        .map(|v| (((v - lo) / width * bins as f64) as usize).min(bins - 1))
        .collect()
}

fn counts(labels: &[usize]) -> Vec<usize> {
    let n = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut c = vec![0; n];
    for &l in labels {
        c[l] += 1;
    }
    c
}

/// Empirical entropy in nats.
pub fn entropy(labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    -counts(labels)
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Empirical mutual information in nats between two discrete sequences.
pub fn mutual_information(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "mutual_information: length mismatch");
    let n = a.len() as f64;
    let (ca, cb) = (counts(a), counts(b));
    let nb = cb.len();
    let mut joint = vec![0usize; ca.len() * nb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * nb + y] += 1;
    }
    let mut mi = 0.0;
    for (i, &c) in joint.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let (x, y) = (i / nb, i % nb);
        let pxy = c as f64 / n;
        mi += pxy * (c as f64 * n / (ca[x] as f64 * cb[y] as f64)).ln();
    }
    mi.max(0.0)
}

fn column(t: &[usize], k: usize, width: usize) -> Vec<usize> {
    t.iter().skip(k).step_by(width).copied().collect()
}

/// Entropy of each factor's empirical marginal.
pub fn factor_entropies(factor_indices: &[usize], num_factors: usize) -> Vec<f64> {
    (0..num_factors)
        .map(|k| entropy(&column(factor_indices, k, num_factors)))
        .collect()
}

/// `[latent][factor]` mutual information with each latent binned into
/// `bins` equal-width bins over its observed range.
pub fn mi_matrix(
    latent_means: &Tensor,
    factor_indices: &[usize],
    num_factors: usize,
    bins: usize,
) -> Result<Vec<Vec<f64>>> {
    let (n, l) = match *latent_means.shape() {
        [n, l] => (n, l),
        ref s => return Err(Error::shape("mi_matrix", s, &[0, 0])),
    };
    if n < 2 {
        return Err(Error::Invalid(format!(
            "mi_matrix needs >= 2 items, got {n}"
        )));
    }
    if bins < 2 {
        return Err(Error::Invalid(format!(
            "mi_matrix needs >= 2 bins, got {bins}"
        )));
    }
    if factor_indices.len() != n * num_factors {
        return Err(Error::shape(
            "mi_matrix",
            &[n, num_factors],
            &[factor_indices.len()],
        ));
    }
    let factors: Vec<Vec<usize>> = (0..num_factors)
        .map(|k| column(factor_indices, k, num_factors))
        .collect();
    let data = latent_means.data();
    Ok((0..l)
        .map(|j| {
            let vals: Vec<f64> = data.iter().skip(j).step_by(l).copied().collect();
            let binned = discretize(&vals, bins);
            factors
                .iter()
                .map(|f| mutual_information(&binned, f))
                .collect()
        })
        .collect())
}

/// Mean over factors of `(top MI - second MI) / H(factor)`.
pub fn mig(mi: &[Vec<f64>], entropies: &[f64]) -> Result<f64> {
    if entropies.is_empty() {
        return Err(Error::Invalid("mig needs at least one factor".into()));
    }
    let mut total = 0.0;
    for (k, &h) in entropies.iter().enumerate() {
        if !(h > 0.0) {
            return Err(Error::domain("mig", format!("factor {k} has zero entropy")));
        }
        let mut col: Vec<f64> = mi.iter().map(|row| row[k]).collect();
        col.sort_by(|a, b| b.total_cmp(a));
        let top = col.first().copied().unwrap_or(0.0);
        let second = col.get(1).copied().unwrap_or(0.0);
        total += (top - second) / h;
    }
    Ok(total / entropies.len() as f64)
}

/// Mean Euclidean distance between matching rows.
pub fn l2_score(mu_y: &Tensor, y: &Tensor) -> Result<f64> {
    if mu_y.shape() != y.shape() || mu_y.shape().len() != 2 || mu_y.shape()[0] == 0 {
        return Err(Error::shape("l2_score", mu_y.shape(), y.shape()));
    }
    let d = mu_y.shape()[1];
    let rows = mu_y
        .data()
        .chunks_exact(d.max(1))
        .zip(y.data().chunks_exact(d.max(1)));
    let sum: f64 = rows
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(sum / mu_y.shape()[0] as f64)
}

/// Majority-vote accuracy of predicting the fixed factor from the latent
/// dimension with the smallest normalized variance. `latents` holds the
/// encoding of every dataset item, row `i` for item `i`.
pub fn factorvae_score(
    latents: &Tensor,
    dataset: &FactorDataset,
    votes: usize,
    batch_per_vote: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let (n, l) = match *latents.shape() {
        [n, l] if n == dataset.len() => (n, l),
        ref s => return Err(Error::shape("factorvae_score", s, &[dataset.len(), 0])),
    };
    if votes == 0 || batch_per_vote < 2 {
        return Err(Error::Invalid(
            "factorvae_score needs votes >= 1 and batch >= 2".into(),
        ));
    }
    let data = latents.data();
    let std: Vec<f64> = (0..l)
        .map(|j| {
            let mean = (0..n).map(|i| data[i * l + j]).sum::<f64>() / n as f64;
            ((0..n)
                .map(|i| (data[i * l + j] - mean).powi(2))
                .sum::<f64>()
                / n as f64)
                .sqrt()
        })
        .collect();
    let active: Vec<usize> = (0..l).filter(|&j| std[j] >= COLLAPSED_STD).collect();
    if active.is_empty() {
        return Err(Error::Invalid(
            "factorvae_score: every latent dimension collapsed".into(),
        ));
    }
    let cards = dataset.spec.cardinalities();
    let k = cards.len();
    let mut table = vec![0usize; l * k];
    let mut combo = vec![0usize; k];
    let mut rows = vec![0.0; batch_per_vote * l];
    for _ in 0..votes {
        let fixed = rng.gen_range(0..k);
        let value = rng.gen_range(0..cards[fixed]);
        for b in 0..batch_per_vote {
            for (f, c) in combo.iter_mut().enumerate() {
                *c = if f == fixed {
                    value
                } else {
                    rng.gen_range(0..cards[f])
                };
            }
            let item = dataset.spec.item_index(&combo);
            for j in 0..l {
                rows[b * l + j] = data[item * l + j] / std[j].max(COLLAPSED_STD);
            }
        }
        let var = |j: usize| {
            let m =
                (0..batch_per_vote).map(|b| rows[b * l + j]).sum::<f64>() / batch_per_vote as f64;
            (0..batch_per_vote)
                .map(|b| (rows[b * l + j] - m).powi(2))
                .sum::<f64>()
                / batch_per_vote as f64
        };
        let best = active
            .iter()
            .copied()
            .min_by(|&a, &b| var(a).total_cmp(&var(b)))
            .expect("non-empty");
        table[best * k + fixed] += 1;
    }
    let correct: usize = table
        .chunks_exact(k)
        .map(|row| *row.iter().max().unwrap())
        .sum();
    Ok(correct as f64 / votes as f64)
}
