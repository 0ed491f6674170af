//! Objective terms: Gaussian reconstruction and KL, the three latent
//! regularizers, label loss, label replacement loss and their weighted sum.
//!
//! Additive constants of Gaussian log-densities are dropped throughout.
//! Tape terms take `[B, D]` batches and average over the batch.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{Encoded, Vae};
use crate::nn::{Bound, LayerSpec, ParamSet, Stack};
use crate::optim::{adam_step, AdamState};

/// Regularizer applied to the full latent posterior in the unsupervised term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RuKind {
    /// Extra KL weight.
    BetaVae,
    /// Total correlation from minibatch density estimates.
    BetaTcVae,
    /// Total correlation from a density-ratio discriminator.
    FactorVae,
}

impl RuKind {
    pub fn name(self) -> &'static str {
        match self {
            RuKind::BetaVae => "beta-vae",
            RuKind::BetaTcVae => "beta-tcvae",
            RuKind::FactorVae => "factorvae",
        }
    }
}

impl FromStr for RuKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta-vae" => Ok(RuKind::BetaVae),
            "beta-tcvae" => Ok(RuKind::BetaTcVae),
            "factorvae" => Ok(RuKind::FactorVae),
            other => Err(Error::Config(format!(
                "unknown ru_kind `{other}` (beta-vae|beta-tcvae|factorvae)"
            ))),
        }
    }
}

impl fmt::Display for RuKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoefMode {
    /// `alpha` and `tau` derived from `gamma` and `lambda`.
    FromGammaLambda,
    /// `alpha` and `tau` given directly.
    DirectAlphaTau,
}

impl CoefMode {
    pub fn name(self) -> &'static str {
        match self {
            CoefMode::FromGammaLambda => "from-gamma-lambda",
            CoefMode::DirectAlphaTau => "direct-alpha-tau",
        }
    }
}

impl FromStr for CoefMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "from-gamma-lambda" => Ok(CoefMode::FromGammaLambda),
            "direct-alpha-tau" => Ok(CoefMode::DirectAlphaTau),
            other => Err(Error::Config(format!(
                "unknown coef_mode `{other}` (from-gamma-lambda|direct-alpha-tau)"
            ))),
        }
    }
}

impl fmt::Display for CoefMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SemiLossConfig {
    pub ru_kind: RuKind,
    /// Weight of the latent regularizer.
    pub gamma_tc: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Weight of the label loss.
    pub alpha: f64,
    /// Weight of the label replacement loss.
    pub tau: f64,
    pub sigma2: f64,
    pub coef_mode: CoefMode,
}

impl Default for SemiLossConfig {
    fn default() -> Self {
        Self {
            ru_kind: RuKind::BetaTcVae,
            gamma_tc: 5.0,
            gamma: 0.0,
            lambda: 0.5,
            alpha: 1.0,
            tau: 1.0,
            sigma2: 0.1,
            coef_mode: CoefMode::DirectAlphaTau,
        }
    }
}

impl SemiLossConfig {
    /// Validates the weights and, in [`CoefMode::FromGammaLambda`], replaces
    /// `alpha` and `tau` by their derived values.
    pub fn resolved(mut self) -> Result<Self> {
        if !(self.sigma2 > 0.0) {
            return Err(Error::Config(format!(
                "sigma2 must be > 0, got {}",
                self.sigma2
            )));
        }
        if !(self.gamma_tc >= 0.0) || !self.gamma_tc.is_finite() {
            return Err(Error::Config(format!(
                "gamma_tc must be >= 0, got {}",
                self.gamma_tc
            )));
        }
        if self.coef_mode == CoefMode::FromGammaLambda {
            let (a, t) = coefficients_from(self.gamma, self.lambda)
                .map_err(|e| Error::Config(e.to_string()))?;
            self.alpha = a;
            self.tau = t;
        }
        for (name, v) in [("alpha", self.alpha), ("tau", self.tau)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(self)
    }
}

/// Term values of one objective evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub unsup_nll: f64,
    pub unsup_kl: f64,
    pub ru_term: f64,
    pub recon: f64,
    pub rep: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub unsup_nll: f64,
    pub unsup_kl: f64,
    pub ru_term: f64,
    pub recon: f64,
    pub rep: f64,
}

impl LossBreakdown {
    /// Unsupervised part: reconstruction, KL and weighted regularizer.
    pub fn unsup(&self, gamma_tc: f64) -> f64 {
        self.unsup_nll + self.unsup_kl + weighted(gamma_tc, self.ru_term)
    }
}

/// `(alpha, tau) = (λγ, (1-λ)γ) / (1 + λγ)`.
pub fn coefficients_from(gamma: f64, lambda: f64) -> Result<(f64, f64)> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::domain(
            "coefficients_from",
            format!("gamma must be >= 0, got {gamma}"),
        ));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::domain(
            "coefficients_from",
            format!("lambda must be in [0, 1], got {lambda}"),
        ));
    }
    let denom = 1.0 + lambda * gamma;
    Ok((lambda * gamma / denom, (1.0 - lambda) * gamma / denom))
}

/// `c * v`, but exactly zero when `c == 0` so unused terms cannot leak.
fn weighted(c: f64, v: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        c * v
    }
}

/// `unsup_nll + unsup_kl + gamma_tc·ru + alpha·recon + tau·rep`.
pub fn compose_semi_loss(parts: LossParts, cfg: &SemiLossConfig) -> Result<LossBreakdown> {
    let named = [
        ("unsup_nll", parts.unsup_nll),
        ("unsup_kl", parts.unsup_kl),
        ("ru_term", parts.ru_term),
        ("recon", parts.recon),
        ("rep", parts.rep),
    ];
    if let Some((name, _)) = named.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            term: name.to_string(),
        });
    }
    let total = parts.unsup_nll
        + parts.unsup_kl
        + weighted(cfg.gamma_tc, parts.ru_term)
        + weighted(cfg.alpha, parts.recon)
        + weighted(cfg.tau, parts.rep);
    Ok(LossBreakdown {
        total,
        unsup_nll: parts.unsup_nll,
        unsup_kl: parts.unsup_kl,
        ru_term: parts.ru_term,
        recon: parts.recon,
        rep: parts.rep,
    })
}

// -------------------------------------------------------------------------
// closed forms on plain values
// -------------------------------------------------------------------------

fn check_sigma2(op: &'static str, sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(
            op,
            format!("sigma2 must be > 0, got {sigma2}"),
        ))
    }
}

/// `KL(N(mean, sigma2·I) || N(0, I))`.
pub fn gaussian_kl(mean: &[f64], sigma2: f64) -> Result<f64> {
    check_sigma2("gaussian_kl", sigma2)?;
    let c = sigma2 - 1.0 - sigma2.ln();
    Ok(0.5 * mean.iter().map(|m| m * m + c).sum::<f64>())
}

/// `‖x - mean‖² / (2·sigma2)`.
pub fn gaussian_nll(x: &[f64], mean: &[f64], sigma2: f64) -> Result<f64> {
    check_sigma2("gaussian_nll", sigma2)?;
    if x.len() != mean.len() {
        return Err(Error::shape("gaussian_nll", &[x.len()], &[mean.len()]));
    }
    Ok(x.iter()
        .zip(mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / (2.0 * sigma2))
}

/// The plain KL penalty: its weight acts as an additional KL coefficient.
pub fn ru_beta(kl: f64, _beta: f64) -> f64 {
    kl
}

/// Batch mean of the summed squared label error.
pub fn label_recon_loss(mu_y: &Tensor, y: &Tensor) -> Result<f64> {
    if mu_y.shape() != y.shape() || mu_y.shape().len() != 2 {
        return Err(Error::shape("label_recon_loss", mu_y.shape(), y.shape()));
    }
    let b = mu_y.shape()[0].max(1) as f64;
    let sse: f64 = mu_y
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sse / b)
}

/// Value of [`tc_mws_term`] without building a persistent tape.
pub fn tc_estimate_mws(
    latents: &Tensor,
    means: &Tensor,
    sigma2: f64,
    dataset_size: usize,
) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(latents.clone());
    let m = tape.constant(means.clone());
    let tc = tc_mws_term(&mut tape, l, m, sigma2, dataset_size)?;
    Ok(tape.value(tc).item())
}

// -------------------------------------------------------------------------
// tape terms
// -------------------------------------------------------------------------

fn batch_of(tape: &Tape, v: Var, op: &'static str) -> Result<(usize, usize)> {
    match *tape.shape(v) {
        [b, d] if b > 0 => Ok((b, d)),
        ref s => Err(Error::shape(op, s, &[0, 0])),
    }
}

/// Batch mean of `KL(N(mean_i, sigma2·I) || N(0, I))` for `mean: [B, D]`.
pub fn kl_term(tape: &mut Tape, mean: Var, sigma2: f64) -> Result<Var> {
    check_sigma2("kl_term", sigma2)?;
    let (b, d) = batch_of(tape, mean, "kl_term")?;
    let sq = tape.square(mean);
    let s = tape.sum(sq);
    let half = tape.scale(s, 0.5 / b as f64);
    Ok(tape.offset(half, 0.5 * d as f64 * (sigma2 - 1.0 - sigma2.ln())))
}

/// Batch mean of `‖x_i - mean_i‖² / (2·sigma2)`.
pub fn nll_term(tape: &mut Tape, x: Var, mean: Var, sigma2: f64) -> Result<Var> {
    check_sigma2("nll_term", sigma2)?;
    let (b, _) = batch_of(tape, x, "nll_term")?;
    if tape.shape(x) != tape.shape(mean) {
        return Err(Error::shape("nll_term", tape.shape(x), tape.shape(mean)));
    }
    let r = tape.sub(x, mean)?;
    let sq = tape.square(r);
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / (2.0 * sigma2 * b as f64)))
}

/// Batch mean of `‖mu_y_i - y_i‖²`.
pub fn label_recon_term(tape: &mut Tape, mu_y: Var, y: Var) -> Result<Var> {
    let (b, _) = batch_of(tape, mu_y, "label_recon")?;
    if tape.shape(mu_y) != tape.shape(y) {
        return Err(Error::shape("label_recon", tape.shape(mu_y), tape.shape(y)));
    }
    let r = tape.sub(mu_y, y)?;
    let sq = tape.square(r);
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / b as f64))
}

/// `log w[i, k]` for the minibatch density estimate: each sample's own
/// posterior gets weight `1/N`, the other `B - 1` share `(N - 1)/N`.
pub fn mws_log_weights(batch: usize, dataset_size: usize) -> Result<Tensor> {
    if batch < 2 {
        return Err(Error::domain(
            "tc_mws",
            format!("batch must be >= 2, got {batch}"),
        ));
    }
    if dataset_size < 2 {
        return Err(Error::domain(
            "tc_mws",
            format!("dataset_size must be >= 2, got {dataset_size}"),
        ));
    }
    let n = dataset_size as f64;
    let own = (1.0 / n).ln();
    let other = ((n - 1.0) / (n * (batch - 1) as f64)).ln();
    Ok(Tensor::from_fn([batch, batch], |i| {
        if i / batch == i % batch {
            own
        } else {
            other
        }
    }))
}

/// Total correlation of the aggregate posterior, estimated from one batch of
/// samples `latents[i]` drawn from `N(means[i], sigma2·I)`:
/// `mean_i [log q(ξ_i) - Σ_j log q(ξ_ij)]`.
pub fn tc_mws_term(
    tape: &mut Tape,
    latents: Var,
    means: Var,
    sigma2: f64,
    dataset_size: usize,
) -> Result<Var> {
    check_sigma2("tc_mws", sigma2)?;
    let (b, d) = batch_of(tape, latents, "tc_mws")?;
    if tape.shape(means) != [b, d] {
        return Err(Error::shape(
            "tc_mws",
            tape.shape(latents),
            tape.shape(means),
        ));
    }
    let logw = mws_log_weights(b, dataset_size)?;
    // log q(ξ_id | x_k) for every (i, k, d)
    let diff = tape.pairwise_sub(latents, means)?;
    let sq = tape.square(diff);
    let scaled = tape.scale(sq, -0.5 / sigma2);
    let logp = tape.offset(scaled, -0.5 * (2.0 * std::f64::consts::PI * sigma2).ln());

    let w3 = Tensor::from_fn([b, b, d], |i| logw.data()[i / d]);
    let w3 = tape.constant(w3);
    let per_dim = tape.add(logp, w3)?;
    let marginals = tape.logsumexp(per_dim, 1)?; // [B, D]

    let joint_k = tape.sum_axis(logp, 2)?; // [B, B]
    let w2 = tape.constant(logw);
    let joint_k = tape.add(joint_k, w2)?;
    let joint = tape.logsumexp(joint_k, 1)?; // [B]

    let mj = tape.mean(joint);
    let sm = tape.sum(marginals);
    let mm = tape.scale(sm, 1.0 / b as f64);
    tape.sub(mj, mm)
}

// -------------------------------------------------------------------------
// model-level terms
// -------------------------------------------------------------------------

/// Unsupervised reconstruction and KL of one batch.
#[derive(Clone, Copy, Debug)]
pub struct ElboTerms {
    pub nll: Var,
    /// KL over the full latent, `kl_y + kl_z`.
    pub kl: Var,
    pub kl_y: Var,
    pub kl_z: Option<Var>,
    pub encoded: Encoded,
    /// Reparameterized sample of the full latent, `[B, dim_y + dim_z]`.
    pub sample: Var,
}

/// One reparameterized sample of `(y, z)` decoded and scored against `x`.
/// `eps` is standard normal noise of shape `[B, dim_y + dim_z]`.
pub fn elbo_terms(
    tape: &mut Tape,
    vae: &Vae,
    params: &Bound,
    x: Var,
    eps: Tensor,
) -> Result<ElboTerms> {
    let encoded = vae.encode(tape, params, x)?;
    let sample = vae.reparameterize(tape, encoded.head, eps)?;
    let p = vae.partition;
    let y = tape.slice(sample, 0, p.dim_y)?;
    let z = match p.dim_z {
        0 => None,
        _ => Some(tape.slice(sample, p.dim_y, p.latent_dim())?),
    };
    let recon = vae.decode(tape, params, y, z)?;
    let nll = nll_term(tape, x, recon, vae.sigma2)?;
    let kl_y = kl_term(tape, encoded.mu_y, vae.sigma2)?;
    let (kl, kl_z) = match encoded.mu_z {
        Some(mz) => {
            let kz = kl_term(tape, mz, vae.sigma2)?;
            (tape.add(kl_y, kz)?, Some(kz))
        }
        None => (kl_y, None),
    };
    Ok(ElboTerms {
        nll,
        kl,
        kl_y,
        kl_z,
        encoded,
        sample,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct ReplacementTerms {
    /// Reconstruction of `x` decoded from the true label and a sampled `z`.
    pub nll: Var,
    /// `KL(q(z|x) || p(z))`, absent when `dim_z == 0`.
    pub kl_z: Option<Var>,
    pub total: Var,
}

/// `nll(x, decode(y_truth, z)) + KL(q(z|x) || p(z))` with `z ~ q(z|x)`.
/// `eps_z` is `[B, dim_z]` standard normal noise, `None` when `dim_z == 0`.
pub fn label_replacement_term(
    tape: &mut Tape,
    vae: &Vae,
    params: &Bound,
    x: Var,
    y_truth: Var,
    eps_z: Option<Tensor>,
) -> Result<ReplacementTerms> {
    let encoded = vae.encode(tape, params, x)?;
    label_replacement_from(tape, vae, params, x, &encoded, y_truth, eps_z)
}

/// [`label_replacement_term`] reusing an existing encoding of `x`.
pub fn label_replacement_from(
    tape: &mut Tape,
    vae: &Vae,
    params: &Bound,
    x: Var,
    encoded: &Encoded,
    y_truth: Var,
    eps_z: Option<Tensor>,
) -> Result<ReplacementTerms> {
    let (z, kl_z) = match (encoded.mu_z, eps_z) {
        (Some(mz), Some(eps)) => {
            let z = vae.reparameterize(tape, mz, eps)?;
            (Some(z), Some(kl_term(tape, mz, vae.sigma2)?))
        }
        (None, None) => (None, None),
        (Some(mz), None) => return Err(Error::shape("label_replacement", tape.shape(mz), &[0])),
        (None, Some(eps)) => return Err(Error::shape("label_replacement", &[0], eps.shape())),
    };
    let recon = vae.decode(tape, params, y_truth, z)?;
    let nll = nll_term(tape, x, recon, vae.sigma2)?;
    let total = match kl_z {
        Some(k) => tape.add(nll, k)?,
        None => nll,
    };
    Ok(ReplacementTerms { nll, kl_z, total })
}

/// Weighted sum of the recorded terms; zero-weight and absent terms are left
/// off the tape.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveTerms {
    pub nll: Var,
    pub kl: Var,
    pub ru: Option<Var>,
    pub recon: Option<Var>,
    pub rep: Option<Var>,
}

pub fn semi_objective(
    tape: &mut Tape,
    terms: &ObjectiveTerms,
    cfg: &SemiLossConfig,
) -> Result<Var> {
    let mut total = tape.add(terms.nll, terms.kl)?;
    for (term, c) in [
        (terms.ru, cfg.gamma_tc),
        (terms.recon, cfg.alpha),
        (terms.rep, cfg.tau),
    ] {
        if let (Some(v), true) = (term, c != 0.0) {
            let s = tape.scale(v, c);
            total = tape.add(total, s)?;
        }
    }
    Ok(total)
}

/// Reads the recorded term values and composes them.
pub fn breakdown(
    tape: &Tape,
    terms: &ObjectiveTerms,
    cfg: &SemiLossConfig,
) -> Result<LossBreakdown> {
    let val = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item());
    compose_semi_loss(
        LossParts {
            unsup_nll: tape.value(terms.nll).item(),
            unsup_kl: tape.value(terms.kl).item(),
            ru_term: val(terms.ru),
            recon: val(terms.recon),
            rep: val(terms.rep),
        },
        cfg,
    )
}

// -------------------------------------------------------------------------
// adversarial total correlation
// -------------------------------------------------------------------------

pub const DISC_HIDDEN: usize = 64;

/// Two-class MLP telling joint latent samples (class 0) from samples whose
/// dimensions were shuffled independently across the batch (class 1).
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub stack: Stack,
}

impl Discriminator {
    pub fn new(latent_dim: usize) -> Self {
        let dense = |inputs, outputs| LayerSpec::Dense { inputs, outputs };
        Self {
            stack: Stack::new(
                "disc",
                vec![
                    dense(latent_dim, DISC_HIDDEN),
                    LayerSpec::Relu,
                    dense(DISC_HIDDEN, DISC_HIDDEN),
                    LayerSpec::Relu,
                    dense(DISC_HIDDEN, 2),
                ],
            ),
        }
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> ParamSet {
        let mut p = ParamSet::new();
        self.stack.init_into(rng, &mut p);
        p
    }

    pub fn logits(&self, tape: &mut Tape, params: &Bound, latents: Var) -> Result<Var> {
        self.stack.forward(tape, params, latents)
    }

    /// `mean(logit_joint - logit_permuted)` over the batch.
    pub fn tc_term(&self, tape: &mut Tape, params: &Bound, latents: Var) -> Result<Var> {
        let (b, _) = batch_of(tape, latents, "tc_adversarial")?;
        if b < 2 {
            return Err(Error::domain("tc_adversarial", "batch must be >= 2"));
        }
        let l = self.logits(tape, params, latents)?;
        let l0 = tape.slice(l, 0, 1)?;
        let l1 = tape.slice(l, 1, 2)?;
        let d = tape.sub(l0, l1)?;
        Ok(tape.mean(d))
    }

    /// Two-class cross-entropy, averaged over both halves.
    pub fn loss_term(
        &self,
        tape: &mut Tape,
        params: &Bound,
        joint: Var,
        permuted: Var,
    ) -> Result<Var> {
        let mut halves = Vec::with_capacity(2);
        for (x, class) in [(joint, 0), (permuted, 1)] {
            let (b, _) = batch_of(tape, x, "discriminator")?;
            let l = self.logits(tape, params, x)?;
            let lse = tape.logsumexp(l, 1)?;
            let lc = tape.slice(l, class, class + 1)?;
            let lc = tape.reshape(lc, &[b])?;
            let nll = tape.sub(lse, lc)?;
            halves.push(tape.mean(nll));
        }
        let s = tape.add(halves[0], halves[1])?;
        Ok(tape.scale(s, 0.5))
    }

    /// One Adam step on the cross-entropy; returns the loss before the step.
    pub fn step(
        &self,
        params: &mut ParamSet,
        state: &mut AdamState,
        joint: &Tensor,
        permuted: &Tensor,
        lr: f64,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let j = tape.constant(joint.clone());
        let p = tape.constant(permuted.clone());
        let loss = self.loss_term(&mut tape, &bound, j, p)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                term: "discriminator".into(),
            });
        }
        tape.backward(loss)?;
        adam_step(params, &bound.grads(&tape), state, lr)?;
        Ok(value)
    }

    /// Fraction of joint and permuted rows assigned to their own class.
    pub fn accuracy(&self, params: &ParamSet, joint: &Tensor, permuted: &Tensor) -> Result<f64> {
        let mut correct = 0usize;
        let mut total = 0usize;
        for (x, class) in [(joint, 0usize), (permuted, 1)] {
            let mut tape = Tape::new();
            let bound = params.bind_frozen(&mut tape);
            let v = tape.constant(x.clone());
            let l = self.logits(&mut tape, &bound, v)?;
            for row in tape.value(l).data().chunks_exact(2) {
                let pred = usize::from(row[1] > row[0]);
                correct += usize::from(pred == class);
                total += 1;
            }
        }
        Ok(correct as f64 / total as f64)
    }
}

/// Discriminator TC estimate for a batch of latents.
pub fn tc_estimate_adversarial(
    disc: &Discriminator,
    params: &ParamSet,
    latents: &Tensor,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let l = tape.constant(latents.clone());
    let tc = disc.tc_term(&mut tape, &bound, l)?;
    Ok(tape.value(tc).item())
}

/// Shuffles every column of a `[B, D]` batch independently.
pub fn permute_dims(latents: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
    let (b, d) = match *latents.shape() {
        [b, d] if b >= 2 => (b, d),
        ref s => {
            return Err(Error::domain(
                "permute_dims",
                format!("need [B >= 2, D], got {s:?}"),
            ))
        }
    };
    let mut out = latents.clone();
    let mut order: Vec<usize> = (0..b).collect();
    for j in 0..d {
        order.shuffle(rng);
        for (i, &src) in order.iter().enumerate() {
            out.data_mut()[i * d + j] = latents.data()[src * d + j];
        }
    }
    Ok(out)
}
