mod common;

use common::{gauss, rng, tiny_vae};
use larvae::autodiff::{Tape, Tensor};
use larvae::data::Preset;
use larvae::losses::{
    compose_semi_loss, elbo_terms, semi_objective, LossParts, ObjectiveTerms, RuKind,
    SemiLossConfig,
};
use larvae::optim::{adam_step, AdamState};
use larvae::train::{evaluate, run_pool, train, EvalConfig, TrainConfig};

fn quick(seed: u64, iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        eval_every: iterations,
        seed,
        fvae_votes: 50,
        ..TrainConfig::default()
    }
}

#[test]
fn two_hundred_steps_lower_the_loss() {
    let data = Preset::DspritesMini.generate();
    let mut improved = 0;
    for seed in 0..10 {
        let mut cfg = quick(seed, 200);
        cfg.loss.tau = 1.0;
        cfg.eta = 0.02;
        let pool = run_pool(&data, &cfg).unwrap();
        let out = train(&data, Some(&pool), &cfg).unwrap();
        if out.losses[199].total < out.losses[0].total {
            improved += 1;
        }
    }
    assert!(improved >= 9, "{improved}/10");
}

#[test]
fn default_config_history_is_finite() {
    let data = Preset::DspritesMini.generate();
    for seed in 0..10 {
        let mut cfg = quick(seed, 1000);
        cfg.eval_every = 250;
        let pool = run_pool(&data, &cfg).unwrap();
        let out = train(&data, Some(&pool), &cfg).unwrap();
        assert_eq!(out.losses.len(), 1000);
        for l in &out.losses {
            let vals = [l.total, l.unsup_nll, l.unsup_kl, l.ru_term, l.recon, l.rep];
            assert!(vals.iter().all(|v| v.is_finite()), "seed {seed}: {l:?}");
        }
        for h in &out.history {
            assert!(h.mig.is_finite() && h.l2.is_finite() && h.factorvae_score.is_finite());
        }
    }
}

#[test]
fn untrained_encoder_is_not_disentangled() {
    let data = Preset::DspritesMini.generate();
    let cfg = TrainConfig::default();
    let vae = cfg.model(&data).unwrap();
    let eval = EvalConfig {
        votes: 50,
        batch_per_vote: 64,
        bins: 20,
        seed: 0,
    };
    for seed in 0..10 {
        let params = vae.init_params(seed);
        let r = evaluate(&vae, &params, &data, &eval).unwrap();
        assert!(r.mig < 0.2, "init {seed}: {}", r.mig);
    }
}

#[test]
fn overfits_eight_images() {
    let data = Preset::DspritesMini.generate();
    let idx: Vec<usize> = (0..8).map(|i| i * 96 + 13).collect();
    let images = data.images.gather_rows(&idx).unwrap();
    let cfg = TrainConfig::default();
    let vae = cfg.model(&data).unwrap();
    let mut params = vae.init_params(0);
    let mut adam = AdamState::new(&params);
    let mut r = rng(0);
    let lc = SemiLossConfig {
        gamma_tc: 0.0,
        alpha: 0.0,
        tau: 0.0,
        ..SemiLossConfig::default()
    };
    for _ in 0..1500 {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(images.clone());
        let eps = Tensor::from_fn([8, vae.latent_dim()], |_| gauss(&mut r));
        let e = elbo_terms(&mut tape, &vae, &bound, x, eps).unwrap();
        let terms = ObjectiveTerms {
            nll: e.nll,
            kl: e.kl,
            ru: None,
            recon: None,
            rep: None,
        };
        let total = semi_objective(&mut tape, &terms, &lc).unwrap();
        tape.backward(total).unwrap();
        let g = bound.grads(&tape);
        adam_step(&mut params, &g, &mut adam, 1e-3).unwrap();
    }
    let means = vae.encode_means(&params, &images).unwrap();
    let recon = vae.decode_latents(&params, &means).unwrap();
    let err = recon
        .data()
        .iter()
        .zip(images.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / images.numel() as f64;
    assert!(err < 0.05, "{err}");
}

#[test]
fn kl_regularizer_adds_to_the_unit_kl_weight() {
    let parts = LossParts {
        unsup_nll: 2.5,
        unsup_kl: 0.75,
        ru_term: 0.75,
        ..LossParts::default()
    };
    let cfg = SemiLossConfig {
        ru_kind: RuKind::BetaVae,
        gamma_tc: 3.0,
        alpha: 0.0,
        tau: 0.0,
        ..SemiLossConfig::default()
    };
    let total = compose_semi_loss(parts, &cfg).unwrap().total;
    assert!((total - (2.5 + 4.0 * 0.75)).abs() < 1e-12);

    // The same weighting holds for the gradient through the shared KL node.
    let vae = tiny_vae(1);
    let params = vae.init_params(3);
    let mut r = rng(3);
    let x = Tensor::from_fn([5, 4], |_| gauss(&mut r).abs().min(1.0));
    let eps = Tensor::from_fn([5, 3], |_| gauss(&mut r));
    let grads = |weighted: bool| {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let e = elbo_terms(&mut tape, &vae, &bound, xv, eps.clone()).unwrap();
        let total = if weighted {
            let terms = ObjectiveTerms {
                nll: e.nll,
                kl: e.kl,
                ru: Some(e.kl),
                recon: None,
                rep: None,
            };
            semi_objective(&mut tape, &terms, &cfg).unwrap()
        } else {
            let k = tape.scale(e.kl, 4.0);
            tape.add(e.nll, k).unwrap()
        };
        tape.backward(total).unwrap();
        bound.grads(&tape)
    };
    let (ga, gb) = (grads(true), grads(false));
    for (name, a) in ga.iter() {
        let b = gb.get(name).unwrap();
        for (a, b) in a.data().iter().zip(b.data()) {
            assert!(
                (a - b).abs() <= 1e-12 * a.abs().max(1.0),
                "{name}: {a} vs {b}"
            );
        }
    }
}
