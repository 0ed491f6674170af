//! Training loop, evaluation and label traversal.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Tensor};
use crate::data::{
    make_labeled_pool, sample_labeled, sample_unlabeled, FactorDataset, LabeledPool,
};
use crate::error::{Error, Result};
use crate::losses::{
    breakdown, elbo_terms, label_recon_term, label_replacement_from, permute_dims, semi_objective,
    tc_mws_term, Discriminator, LossBreakdown, ObjectiveTerms, RuKind, SemiLossConfig,
};
use crate::metrics::{
    factor_entropies, factorvae_score, l2_score, mi_matrix, mig, MetricsReport, DEFAULT_FVAE_BATCH,
    DEFAULT_FVAE_VOTES, DEFAULT_MIG_BINS,
};
use crate::model::{LatentPartition, Vae};
use crate::nn::{Architecture, ParamSet};
use crate::optim::{adam_step, AdamState};

/// Independent random sub-streams derived from a run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Pool = 2,
    Unlabeled = 3,
    Labeled = 4,
    UnsupNoise = 5,
    RepNoise = 6,
    Metric = 7,
    Discriminator = 8,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of the dataset with observed labels.
    pub eta: f64,
    pub seed: u64,
    /// Metrics are recorded every `eval_every` iterations and after the last.
    pub eval_every: usize,
    pub loss: SemiLossConfig,
    pub dim_z: usize,
    pub arch: Architecture,
    pub disc_learning_rate: f64,
    pub fvae_votes: usize,
    pub fvae_batch: usize,
    pub mig_bins: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            batch_size: 64,
            learning_rate: 1e-4,
            eta: 0.02,
            seed: 0,
            eval_every: 5_000,
            loss: SemiLossConfig::default(),
            dim_z: 5,
            arch: Architecture::Mlp,
            disc_learning_rate: 1e-4,
            fvae_votes: DEFAULT_FVAE_VOTES,
            fvae_batch: DEFAULT_FVAE_BATCH,
            mig_bins: DEFAULT_MIG_BINS,
        }
    }
}

impl TrainConfig {
    /// Checks ranges and resolves the loss coefficients.
    pub fn resolved(mut self) -> Result<Self> {
        let bad = |m: String| Err(Error::Config(m));
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if self.batch_size < 2 {
            return bad("batch_size must be >= 2".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.disc_learning_rate > 0.0) || !self.disc_learning_rate.is_finite() {
            return bad(format!(
                "disc_learning_rate must be > 0, got {}",
                self.disc_learning_rate
            ));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad(format!("eta must be in (0, 1], got {}", self.eta));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        if self.fvae_votes == 0 || self.fvae_batch < 2 || self.mig_bins < 2 {
            return bad("fvae_votes >= 1, fvae_batch >= 2 and mig_bins >= 2 required".into());
        }
        self.loss = self.loss.resolved()?;
        Ok(self)
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            votes: self.fvae_votes,
            batch_per_vote: self.fvae_batch,
            bins: self.mig_bins,
            seed: self.seed,
        }
    }

    pub fn model(&self, dataset: &FactorDataset) -> Result<Vae> {
        let partition = LatentPartition::new(dataset.num_factors(), self.dim_z)?;
        Vae::new(
            self.arch,
            dataset.spec.image_shape,
            partition,
            self.loss.sigma2,
        )
    }

    /// Whether the labeled batch contributes to the objective at all.
    pub fn uses_labels(&self) -> bool {
        self.loss.alpha > 0.0 || self.loss.tau > 0.0
    }
}

/// One row of the metric history.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub mig: f64,
    pub l2: f64,
    pub factorvae_score: f64,
    pub total_loss: f64,
    /// Unsupervised part including the weighted regularizer.
    pub unsup: f64,
    pub recon: f64,
    pub rep: f64,
}

pub const HISTORY_HEADER: &str = "iteration,mig,l2,factorvae_score,total_loss,unsup,recon,rep";

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.iteration, r.mig, r.l2, r.factorvae_score, r.total_loss, r.unsup, r.recon, r.rep
        ));
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub vae: Vae,
    pub params: ParamSet,
    pub history: Vec<HistoryRow>,
    /// Loss terms of every iteration, before its update.
    pub losses: Vec<LossBreakdown>,
    /// Number of decoder evaluations on ground-truth labels.
    pub truth_decodes: usize,
    pub discriminator: Option<ParamSet>,
    pub final_report: MetricsReport,
}

/// Labeled pool for a run: drawn from the seed's pool stream.
pub fn run_pool(dataset: &FactorDataset, cfg: &TrainConfig) -> Result<LabeledPool> {
    make_labeled_pool(dataset, cfg.eta, &mut stream_rng(cfg.seed, Stream::Pool))
}

fn normal(shape: [usize; 2], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// Trains with one Adam step per iteration on the semi-supervised objective.
/// `pool` may be `None` only when neither label term is weighted.
pub fn train(
    dataset: &FactorDataset,
    pool: Option<&LabeledPool>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(dataset, pool, cfg, |_, _| {})
}

/// [`train`] with a callback after every iteration.
pub fn train_with(
    dataset: &FactorDataset,
    pool: Option<&LabeledPool>,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, &LossBreakdown),
) -> Result<TrainOutcome> {
    let cfg = cfg.clone().resolved()?;
    let lc = cfg.loss;
    let pool = match (cfg.uses_labels(), pool) {
        (true, None) => {
            return Err(Error::Invalid(
                "label terms are weighted but no labeled pool was given".into(),
            ))
        }
        (true, Some(p)) if p.is_empty() => {
            return Err(Error::Invalid("labeled pool is empty".into()))
        }
        (true, p) => p,
        (false, _) => None,
    };
    let vae = cfg.model(dataset)?;
    let (b, latent, dim_z) = (cfg.batch_size, vae.latent_dim(), vae.partition.dim_z);
    let mut params = vae.init_params_with(&mut stream_rng(cfg.seed, Stream::Init));
    let mut adam = AdamState::new(&params);

    let mut rng_unl = stream_rng(cfg.seed, Stream::Unlabeled);
    let mut rng_lab = stream_rng(cfg.seed, Stream::Labeled);
    let mut rng_noise = stream_rng(cfg.seed, Stream::UnsupNoise);
    let mut rng_rep = stream_rng(cfg.seed, Stream::RepNoise);

    let adversarial = lc.ru_kind == RuKind::FactorVae && lc.gamma_tc > 0.0;
    let disc = Discriminator::new(latent);
    let mut rng_disc = stream_rng(cfg.seed, Stream::Discriminator);
    let mut disc_params = adversarial.then(|| disc.init_params(&mut rng_disc));
    let mut disc_adam = disc_params.as_ref().map(AdamState::new);

    let eval = cfg.eval_config();
    let mut history = Vec::new();
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut truth_decodes = 0;
    let mut final_report = None;

    for it in 1..=cfg.iterations {
        let unl = sample_unlabeled(dataset, b, &mut rng_unl)?;
        let lab = match pool {
            Some(p) => Some(sample_labeled(dataset, p, b, &mut rng_lab)?),
            None => None,
        };

        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(unl.images);
        let elbo = elbo_terms(
            &mut tape,
            &vae,
            &bound,
            x,
            normal([b, latent], &mut rng_noise),
        )?;
        let ru = if lc.gamma_tc == 0.0 {
            None
        } else {
            Some(match lc.ru_kind {
                RuKind::BetaVae => elbo.kl,
                RuKind::BetaTcVae => tc_mws_term(
                    &mut tape,
                    elbo.sample,
                    elbo.encoded.head,
                    lc.sigma2,
                    dataset.len(),
                )?,
                RuKind::FactorVae => {
                    let dp = disc_params
                        .as_ref()
                        .expect("adversarial")
                        .bind_frozen(&mut tape);
                    disc.tc_term(&mut tape, &dp, elbo.sample)?
                }
            })
        };
        let (mut recon, mut rep) = (None, None);
        if let Some(lab) = lab {
            let xl = tape.constant(lab.images);
            let yl = tape.constant(lab.labels);
            let enc = vae.encode(&mut tape, &bound, xl)?;
            if lc.alpha > 0.0 {
                recon = Some(label_recon_term(&mut tape, enc.mu_y, yl)?);
            }
            if lc.tau > 0.0 {
                let eps_z = (dim_z > 0).then(|| normal([b, dim_z], &mut rng_rep));
                rep = Some(
                    label_replacement_from(&mut tape, &vae, &bound, xl, &enc, yl, eps_z)?.total,
                );
                truth_decodes += 1;
            }
        }
        let terms = ObjectiveTerms {
            nll: elbo.nll,
            kl: elbo.kl,
            ru,
            recon,
            rep,
        };
        let total = semi_objective(&mut tape, &terms, &lc)?;
        let bd = breakdown(&tape, &terms, &lc)?;
        if !tape.value(total).item().is_finite() {
            return Err(Error::NonFinite {
                term: "total".into(),
            });
        }
        tape.backward(total)?;
        let grads = bound.grads(&tape);
        adam_step(&mut params, &grads, &mut adam, cfg.learning_rate)?;

        if let (Some(dp), Some(da)) = (disc_params.as_mut(), disc_adam.as_mut()) {
            let joint = tape.value(elbo.sample).clone();
            let permuted = permute_dims(&joint, &mut rng_disc)?;
            disc.step(dp, da, &joint, &permuted, cfg.disc_learning_rate)?;
        }
        drop(tape);

        losses.push(bd);
        on_step(it, &bd);
        if it % cfg.eval_every == 0 || it == cfg.iterations {
            let report = evaluate(&vae, &params, dataset, &eval)?;
            history.push(HistoryRow {
                iteration: it,
                mig: report.mig,
                l2: report.l2,
                factorvae_score: report.factorvae_score,
                total_loss: bd.total,
                unsup: bd.unsup(lc.gamma_tc),
                recon: bd.recon,
                rep: bd.rep,
            });
            final_report = Some(report);
        }
    }
    Ok(TrainOutcome {
        vae,
        params,
        history,
        losses,
        truth_decodes,
        discriminator: disc_params,
        final_report: final_report.expect("at least one evaluation"),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub votes: usize,
    pub batch_per_vote: usize,
    pub bins: usize,
    /// Seeds the metric stream used by the factor classifier score.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            votes: DEFAULT_FVAE_VOTES,
            batch_per_vote: DEFAULT_FVAE_BATCH,
            bins: DEFAULT_MIG_BINS,
            seed: 0,
        }
    }
}

/// Metrics of the encoder means over the whole dataset.
pub fn evaluate(
    vae: &Vae,
    params: &ParamSet,
    dataset: &FactorDataset,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let means = vae.encode_means(params, &dataset.images)?;
    if !means.all_finite() {
        return Err(Error::NonFinite {
            term: "encoder means".into(),
        });
    }
    evaluate_latents(&means, vae.partition.dim_y, dataset, cfg)
}

/// Metrics of precomputed `[N, dim_y + dim_z]` codes; the first `dim_y`
/// columns are compared against the labels.
pub fn evaluate_latents(
    means: &Tensor,
    dim_y: usize,
    dataset: &FactorDataset,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let k = dataset.num_factors();
    let n = dataset.len();
    let l = means.shape().get(1).copied().unwrap_or(0);
    if means.shape() != [n, l] || dim_y != k || l < k {
        return Err(Error::shape("evaluate", means.shape(), &[n, k]));
    }
    let mi = mi_matrix(means, &dataset.factor_indices, k, cfg.bins)?;
    let entropies = factor_entropies(&dataset.factor_indices, k);
    let mig = mig(&mi, &entropies)?;
    let mu_y = Tensor::from_fn([n, k], |i| means.data()[(i / k) * l + i % k]);
    let l2 = l2_score(&mu_y, &dataset.labels)?;
    let mut rng = stream_rng(cfg.seed, Stream::Metric);
    let factorvae_score = factorvae_score(means, dataset, cfg.votes, cfg.batch_per_vote, &mut rng)?;
    Ok(MetricsReport {
        mig,
        l2,
        factorvae_score,
        mi_matrix: mi,
        entropies,
    })
}

/// A reference image followed by images decoded while one label dimension
/// sweeps its observed range with the nuisance part fixed at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Traversal {
    pub item: usize,
    pub dim: usize,
    pub reference: Vec<f64>,
    /// Decoder inputs `[y~ | z = 0]`, one per step.
    pub inputs: Vec<Vec<f64>>,
    pub images: Vec<Vec<f64>>,
}

impl Traversal {
    /// Reference first, then the generated sequence.
    pub fn cells(&self) -> impl Iterator<Item = &[f64]> {
        std::iter::once(self.reference.as_slice()).chain(self.images.iter().map(Vec::as_slice))
    }
}

pub fn traverse(
    vae: &Vae,
    params: &ParamSet,
    dataset: &FactorDataset,
    item: usize,
    dim: usize,
    steps: usize,
) -> Result<Traversal> {
    if item >= dataset.len() {
        return Err(Error::Invalid(format!(
            "item {item} out of range (N = {})",
            dataset.len()
        )));
    }
    if dim >= vae.partition.dim_y || dim >= dataset.num_factors() {
        return Err(Error::Invalid(format!(
            "dim {dim} out of range (dim_y = {})",
            vae.partition.dim_y
        )));
    }
    if steps < 2 {
        return Err(Error::Invalid(format!("steps must be >= 2, got {steps}")));
    }
    let (lo, hi) = dataset.label_range(dim);
    let base = dataset.label(item);
    let latent = vae.latent_dim();
    let inputs: Vec<Vec<f64>> = (0..steps)
        .map(|s| {
            let mut v = vec![0.0; latent];
            v[..base.len()].copy_from_slice(base);
            v[dim] = lo + (hi - lo) * s as f64 / (steps - 1) as f64;
            v
        })
        .collect();
    let flat = Tensor::new([steps, latent], inputs.concat())?;
    let out = vae.decode_latents(params, &flat)?;
    let p = vae.pixels();
    Ok(Traversal {
        item,
        dim,
        reference: dataset.image(item).to_vec(),
        images: out.data().chunks_exact(p).map(<[f64]>::to_vec).collect(),
        inputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_colors_mini, generate_dsprites_mini};
    use crate::losses::CoefMode;

    fn quick(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            batch_size: 16,
            learning_rate: 1e-3,
            eval_every: iterations,
            fvae_votes: 50,
            fvae_batch: 16,
            ..Default::default()
        }
    }

    #[test]
    fn defaults_follow_the_stated_values() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.loss.tau, 1.0);
        assert_eq!(c.dim_z, 5);
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.iterations, 20_000);
        assert!(TrainConfig {
            iterations: 0,
            ..c.clone()
        }
        .resolved()
        .is_err());
        assert!(TrainConfig {
            learning_rate: 0.0,
            ..c
        }
        .resolved()
        .is_err());
    }

    #[test]
    fn baseline_never_decodes_true_labels() {
        let d = generate_dsprites_mini();
        let mut cfg = quick(5);
        cfg.loss.tau = 0.0;
        let pool = run_pool(&d, &cfg).unwrap();
        let out = train(&d, Some(&pool), &cfg).unwrap();
        assert_eq!(out.truth_decodes, 0);
        assert!(out.losses.iter().all(|l| l.rep == 0.0));
        cfg.loss.tau = 1.0;
        let out = train(&d, Some(&pool), &cfg).unwrap();
        assert_eq!(out.truth_decodes, 5);
    }

    #[test]
    fn identical_config_identical_history() {
        let d = generate_dsprites_mini();
        let cfg = quick(6);
        let pool = run_pool(&d, &cfg).unwrap();
        let a = train(&d, Some(&pool), &cfg).unwrap();
        let b = train(&d, Some(&pool), &cfg).unwrap();
        assert_eq!(history_csv(&a.history), history_csv(&b.history));
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn zero_gamma_matches_unsupervised_run() {
        let d = generate_dsprites_mini();
        let mut cfg = quick(4);
        cfg.loss.coef_mode = CoefMode::FromGammaLambda;
        cfg.loss.gamma = 0.0;
        let pool = run_pool(&d, &cfg).unwrap();
        let semi = train(&d, Some(&pool), &cfg).unwrap();
        let unsup = train(&d, None, &cfg).unwrap();
        assert_eq!(semi.params, unsup.params);
        assert_eq!(semi.losses, unsup.losses);
    }

    #[test]
    fn missing_pool_is_rejected_when_labels_are_weighted() {
        let d = generate_dsprites_mini();
        assert!(train(&d, None, &quick(1)).is_err());
    }

    #[test]
    fn every_regularizer_trains() {
        let d = generate_colors_mini();
        for kind in [RuKind::BetaVae, RuKind::BetaTcVae, RuKind::FactorVae] {
            let mut cfg = quick(3);
            cfg.loss.ru_kind = kind;
            let pool = run_pool(&d, &cfg).unwrap();
            let out = train(&d, Some(&pool), &cfg).unwrap();
            assert_eq!(out.discriminator.is_some(), kind == RuKind::FactorVae);
            assert!(out.losses.iter().all(|l| l.total.is_finite()));
        }
    }

    #[test]
    fn evaluation_of_an_oracle_code_is_perfect() {
        let d = generate_dsprites_mini();
        let k = d.num_factors();
        let code = Tensor::from_fn([d.len(), k + 2], |i| {
            let (row, col) = (i / (k + 2), i % (k + 2));
            if col < k {
                d.label(row)[col]
            } else {
                0.0
            }
        });
        let r = evaluate_latents(&code, k, &d, &EvalConfig::default()).unwrap();
        assert!((r.mig - 1.0).abs() < 1e-9);
        assert_eq!(r.l2, 0.0);
        assert_eq!(r.factorvae_score, 1.0);
    }

    #[test]
    fn traversal_contract() {
        let d = generate_dsprites_mini();
        let cfg = quick(1);
        let vae = cfg.model(&d).unwrap();
        let params = vae.init_params(3);
        let t = traverse(&vae, &params, &d, 100, 2, 5).unwrap();
        assert_eq!(t.cells().count(), 6);
        assert_eq!(t.reference, d.image(100));
        for input in &t.inputs {
            for j in (0..input.len()).filter(|&j| j != 2) {
                assert_eq!(input[j].to_bits(), t.inputs[0][j].to_bits());
            }
        }
        assert_eq!(t.inputs[0][2], -1.0);
        assert_eq!(t.inputs[4][2], 1.0);
        assert_eq!(traverse(&vae, &params, &d, 100, 2, 5).unwrap(), t);
        assert!(traverse(&vae, &params, &d, 768, 0, 5).is_err());
        assert!(traverse(&vae, &params, &d, 0, 4, 5).is_err());
        assert!(traverse(&vae, &params, &d, 0, 0, 1).is_err());
    }
}
