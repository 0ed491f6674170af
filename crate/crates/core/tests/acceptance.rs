//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance -- 2 5` runs only criteria 2 and 5.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use common::{
    bivariate_tc, correlated_latents, factorized_latents, gauss, rng, table_mi, table_samples,
    tiny_parts, ThreeState,
};
use larvae::autodiff::Tensor;
use larvae::checks::{run_all, DEFAULT_INSTANCES};
use larvae::config::{DatasetSource, RunConfig};
use larvae::data::{FactorDataset, Preset};
use larvae::losses::{
    coefficients_from, compose_semi_loss, gaussian_kl, tc_estimate_mws, CoefMode, RuKind,
    SemiLossConfig,
};
use larvae::metrics::{factorvae_score, mutual_information};
use larvae::run::{
    evaluate_run, sweep, train_run_on, traverse_to_dir, CHECKPOINT_FILE, HISTORY_FILE,
    METRICS_FILE, MI_MATRIX_FILE,
};
use larvae::train::{evaluate_latents, EvalConfig};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// Shared state: criterion 7 compares against a run of criterion 6.
struct Ctx {
    dir: PathBuf,
    dsprites: FactorDataset,
    baseline_seed0: Option<PathBuf>,
}

fn main() {
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut ctx = Ctx {
        dir: tmp.path().to_path_buf(),
        dsprites: Preset::DspritesMini.generate(),
        baseline_seed0: None,
    };
    let criteria: [(usize, &str, fn(&mut Ctx) -> Outcome); 9] = [
        (1, "gradient suite", c1_gradients),
        (2, "decomposition identity", c2_decomposition),
        (3, "KL and bound checks", c3_kl_and_bounds),
        (4, "metric oracles", c4_metric_oracles),
        (5, "TC estimator calibration", c5_tc_calibration),
        (6, "label replacement beats baseline", c6_replication),
        (7, "sweeps", c7_sweeps),
        (8, "traversal contract", c8_traversal),
        (9, "determinism and persistence", c9_determinism),
    ];
    let mut failed = Vec::new();
    for (n, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let o = run(&mut ctx);
        let status = if o.passed { "PASS" } else { "FAIL" };
        println!(
            "criterion {n} ({name}): {status} [{:.1}s] {}",
            t.elapsed().as_secs_f64(),
            o.detail
        );
        if !o.passed {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

fn c1_gradients(_: &mut Ctx) -> Outcome {
    let t = Instant::now();
    let report = run_all(DEFAULT_INSTANCES, 0, None).expect("suite runs");
    let secs = t.elapsed().as_secs_f64();
    let worst = report
        .results
        .iter()
        .max_by(|a, b| (a.max_rel_err / a.tol).total_cmp(&(b.max_rel_err / b.tol)))
        .expect("checks");
    let skipped: usize = report.results.iter().map(|r| r.skipped).sum();
    outcome(
        report.passed() && secs < 120.0,
        format!(
            "{} checks x {DEFAULT_INSTANCES}, failures {:?}, worst {} {:.2e} (tol {:.0e}), {skipped} kink coords skipped, {secs:.0}s < 120s",
            report.results.len(),
            report.failures(),
            worst.name,
            worst.max_rel_err,
            worst.tol
        ),
    )
}

fn c2_decomposition(_: &mut Ctx) -> Outcome {
    let t = Instant::now();
    let parts = tiny_parts(7);
    let gamma_tc = 3.0;
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (gamma, lambda) = (r.gen_range(0.0..=5.0), r.gen_range(0.0..=1.0));
        let gl = gamma * lambda;
        let cfg = SemiLossConfig {
            ru_kind: RuKind::BetaTcVae,
            gamma_tc: gamma_tc / (1.0 + gl),
            gamma,
            lambda,
            coef_mode: CoefMode::FromGammaLambda,
            ..SemiLossConfig::default()
        }
        .resolved()
        .expect("valid");
        assert_eq!(
            (cfg.alpha, cfg.tau),
            coefficients_from(gamma, lambda).unwrap()
        );
        let scaled = (1.0 + gl) * compose_semi_loss(parts, &cfg).unwrap().total;
        let lx = parts.unsup_nll + parts.unsup_kl;
        let direct = lx
            + gamma_tc * parts.ru_term
            + gl * (parts.recon + lx)
            + gamma * (1.0 - lambda) * parts.rep;
        worst = worst.max((scaled - direct).abs() / direct.abs());
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && secs < 60.0,
        format!("50 draws, max rel diff {worst:.2e} <= 1e-9"),
    )
}

fn c3_kl_and_bounds(_: &mut Ctx) -> Outcome {
    let t = Instant::now();
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let d = r.gen_range(1..=4);
        let mean: Vec<f64> = (0..d).map(|_| gauss(&mut r)).collect();
        let s2: f64 = r.gen_range(0.2..0.8);
        let exact = gaussian_kl(&mean, s2).unwrap();
        let samples = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..samples {
            // log q(x) - log p(x); normalizers enter through the ln(s2) term
            let mut lr = 0.0;
            for &m in &mean {
                let e = gauss(&mut r);
                let x = m + s2.sqrt() * e;
                lr += -0.5 * e * e - 0.5 * s2.ln() + 0.5 * x * x;
            }
            acc += lr;
        }
        let mc = acc / samples as f64;
        worst = worst.max((mc - exact).abs() / exact);
    }
    let mut violations = 0;
    let mut min_gap = f64::INFINITY;
    for _ in 0..100 {
        let t = ThreeState::random(&mut r, 4);
        let gap = t.replacement_loss() - t.neg_log_likelihood();
        min_gap = min_gap.min(gap);
        if gap < -1e-12 {
            violations += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst < 0.01 && violations == 0 && secs < 120.0,
        format!("KL vs 1e6-sample MC max rel err {worst:.2e} < 1e-2; bound violations {violations}/100 (min gap {min_gap:.3e})"),
    )
}

fn c4_metric_oracles(ctx: &mut Ctx) -> Outcome {
    let t = Instant::now();
    let d = &ctx.dsprites;
    let eval = EvalConfig {
        votes: 500,
        batch_per_vote: 64,
        bins: 20,
        seed: 4,
    };
    let oracle = evaluate_latents(&d.labels, d.num_factors(), d, &eval).unwrap();
    let mut r = rng(4);
    let noise_codes = Tensor::from_fn([d.len(), d.num_factors()], |_| gauss(&mut r));
    let noise = evaluate_latents(&noise_codes, d.num_factors(), d, &eval).unwrap();
    let noise_score = factorvae_score(&noise_codes, d, 500, 64, &mut rng(40)).unwrap();
    let chance = 1.0 / d.num_factors() as f64;

    let table = vec![
        vec![9, 1, 0, 3],
        vec![2, 7, 4, 0],
        vec![0, 5, 6, 1],
        vec![3, 0, 2, 8],
    ];
    let (a, b) = table_samples(&table);
    let mi_err = (mutual_information(&a, &b) - table_mi(&table)).abs();

    let ok = (oracle.mig - 1.0).abs() <= 1e-9
        && oracle.l2 == 0.0
        && oracle.factorvae_score == 1.0
        && noise.mig < 0.05
        && (noise_score - chance).abs() <= 0.1
        && (noise.factorvae_score - chance).abs() <= 0.1
        && mi_err <= 1e-12
        && t.elapsed().as_secs_f64() < 60.0;
    outcome(
        ok,
        format!(
            "oracle MIG {:.12} l2 {} score {}; noise MIG {:.4} score {:.3}/{:.3} (chance {chance}); 4x4 MI err {mi_err:.1e}",
            oracle.mig, oracle.l2, oracle.factorvae_score, noise.mig, noise.factorvae_score, noise_score
        ),
    )
}

fn c5_tc_calibration(_: &mut Ctx) -> Outcome {
    let t = Instant::now();
    let (b, s2) = (1024, 0.05);
    let mut corr = Vec::new();
    let mut fact = Vec::new();
    for seed in 0..20 {
        let (l, m) = correlated_latents(b, 0.9, s2, &mut rng(500 + seed));
        corr.push(tc_estimate_mws(&l, &m, s2, b).unwrap());
        let (l, m) = factorized_latents(b, 2, s2, &mut rng(600 + seed));
        fact.push(tc_estimate_mws(&l, &m, s2, b).unwrap());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let target = bivariate_tc(0.9);
    let (mc, mf) = (mean(&corr), mean(&fact));
    let worst_fact = fact.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    outcome(
        (mc - target).abs() <= 0.25 && worst_fact < 0.1 && t.elapsed().as_secs_f64() < 60.0,
        format!("rho 0.9: mean {mc:.4} vs {target:.4}; factorized mean {mf:.4} (max |.| {worst_fact:.4})"),
    )
}

fn replication_config(out_dir: &Path, tau: f64, seed: u64) -> RunConfig {
    let mut c = RunConfig::new(DatasetSource::Preset(Preset::DspritesMini));
    c.train.iterations = 20_000;
    c.train.eta = 0.02;
    c.train.seed = seed;
    c.train.loss.ru_kind = RuKind::BetaTcVae;
    c.train.loss.tau = tau;
    c.out_dir = out_dir.to_path_buf();
    c
}

fn c6_replication(ctx: &mut Ctx) -> Outcome {
    let t = Instant::now();
    let seeds: Vec<u64> = (0..6).collect();
    let mut rows = Vec::new();
    for &s in &seeds {
        let mut pair = [(0.0, 0.0); 2];
        for (i, tau) in [0.0, 1.0].into_iter().enumerate() {
            let dir = ctx.dir.join(format!("c6/tau{tau}/seed{s}"));
            let o =
                train_run_on(&replication_config(&dir, tau, s), &ctx.dsprites).expect("training");
            pair[i] = (o.final_report.mig, o.final_report.l2);
            if s == 0 && tau == 0.0 {
                ctx.baseline_seed0 = Some(dir);
            }
        }
        rows.push(pair);
    }
    let n = seeds.len() as f64;
    let mean = |f: &dyn Fn(&[(f64, f64); 2]) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let (mig0, mig1) = (mean(&|p| p[0].0), mean(&|p| p[1].0));
    let (l20, l21) = (mean(&|p| p[0].1), mean(&|p| p[1].1));
    let wins = rows.iter().filter(|p| p[1].0 > p[0].0).count();
    let secs = t.elapsed().as_secs_f64();
    let per_seed: Vec<String> = rows
        .iter()
        .map(|p| format!("{:.3}/{:.3}", p[0].0, p[1].0))
        .collect();
    outcome(
        mig1 > mig0 && l21 < l20 && wins >= 4 && secs < 45.0 * 60.0,
        format!(
            "MIG tau0 {mig0:.4} tau1 {mig1:.4}; l2 tau0 {l20:.4} tau1 {l21:.4}; MIG wins {wins}/6 (per seed tau0/tau1: {}); {:.1} min",
            per_seed.join(" "),
            secs / 60.0
        ),
    )
}

fn same_files(a: &Path, b: &Path) -> bool {
    [CHECKPOINT_FILE, HISTORY_FILE, METRICS_FILE, MI_MATRIX_FILE]
        .iter()
        .all(|f| {
            fs::read(a.join(f))
                .ok()
                .is_some_and(|x| fs::read(b.join(f)).ok() == Some(x))
        })
}

fn c7_sweeps(ctx: &mut Ctx) -> Outcome {
    let t = Instant::now();
    let base_dir = ctx.dir.join("c7");
    let base = replication_config(&base_dir, 1.0, 0);
    let strings = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let taus = strings(&["0", "0.1", "0.5", "1", "5", "10"]);
    let dims = strings(&["0", "1", "5", "10", "50"]);
    let tau_sweep = sweep(&base, "tau", &taus, &[], 1).expect("tau sweep");
    let dim_sweep = sweep(&base, "dim_z", &dims, &[], 1).expect("dim_z sweep");
    let rows_ok = |csv_name: &str, n: usize| {
        fs::read_to_string(base_dir.join(csv_name)).is_ok_and(|s| s.lines().count() == n + 1)
    };
    let csvs = rows_ok("sweep_tau.csv", taus.len()) && rows_ok("sweep_dim_z.csv", dims.len());
    let tau0_dir = &tau_sweep.runs[0].dir;
    let matches = match &ctx.baseline_seed0 {
        Some(b) => Some(same_files(b, tau0_dir)),
        None => {
            // criterion 6 not run in this invocation: reproduce its seed-0 baseline
            let dir = ctx.dir.join("c7-baseline");
            train_run_on(&replication_config(&dir, 0.0, 0), &ctx.dsprites).expect("baseline");
            Some(same_files(&dir, tau0_dir))
        }
    };
    let secs = t.elapsed().as_secs_f64();
    let fmt = |s: &larvae::run::SweepSummary| {
        s.rows
            .iter()
            .map(|r| format!("{}:{:.3}/{:.3}", r.value, r.final_mig, r.final_l2))
            .collect::<Vec<_>>()
            .join(" ")
    };
    outcome(
        csvs && matches == Some(true) && secs < 4.0 * 3600.0,
        format!(
            "tau MIG/l2 [{}]; dim_z MIG/l2 [{}]; tau=0 bit-exact vs baseline: {}; {:.1} min",
            fmt(&tau_sweep),
            fmt(&dim_sweep),
            matches == Some(true),
            secs / 60.0
        ),
    )
}

fn short_config(dir: &Path, dataset: Preset, seed: u64) -> RunConfig {
    let mut c = RunConfig::new(DatasetSource::Preset(dataset));
    c.train.iterations = 300;
    c.train.eval_every = 100;
    c.train.seed = seed;
    c.out_dir = dir.to_path_buf();
    c
}

fn c8_traversal(ctx: &mut Ctx) -> Outcome {
    let mut problems = Vec::new();
    for preset in [Preset::DspritesMini, Preset::ColorsMini] {
        let data = preset.generate();
        let run = ctx.dir.join(format!("c8/{preset}"));
        train_run_on(&short_config(&run, preset, 8), &data).expect("training");
        let ckpt = run.join(CHECKPOINT_FILE);
        let steps = 7;
        for dim in 0..data.num_factors() {
            let out_a = run.join(format!("trav-a-{dim}"));
            let out_b = run.join(format!("trav-b-{dim}"));
            let (trav, paths) = traverse_to_dir(&ckpt, &data, 100, dim, steps, &out_a).unwrap();
            let (_, paths_b) = traverse_to_dir(&ckpt, &data, 100, dim, steps, &out_b).unwrap();
            if trav.images.len() != steps
                || trav.cells().count() != steps + 1
                || paths.len() != steps + 2
            {
                problems.push(format!("{preset} dim {dim}: wrong cell count"));
            }
            let fixed_ok = trav.inputs.iter().all(|inp| {
                inp.iter()
                    .zip(&trav.inputs[0])
                    .enumerate()
                    .all(|(j, (a, b))| j == dim || a.to_bits() == b.to_bits())
            });
            if !fixed_ok {
                problems.push(format!("{preset} dim {dim}: non-traversed entries differ"));
            }
            let same = paths
                .iter()
                .zip(&paths_b)
                .all(|(a, b)| fs::read(a).unwrap() == fs::read(b).unwrap());
            if !same {
                problems.push(format!("{preset} dim {dim}: rerun differs"));
            }
        }
    }
    let ok = problems.is_empty();
    outcome(
        ok,
        if ok {
            "2 presets x every label dim: 1 reference + 7 steps, fixed entries bit-identical, reruns byte-identical".into()
        } else {
            problems.join("; ")
        },
    )
}

fn c9_determinism(ctx: &mut Ctx) -> Outcome {
    let (a, b) = (ctx.dir.join("c9/a"), ctx.dir.join("c9/b"));
    let first = train_run_on(&short_config(&a, Preset::DspritesMini, 9), &ctx.dsprites).unwrap();
    train_run_on(&short_config(&b, Preset::DspritesMini, 9), &ctx.dsprites).unwrap();
    let identical = [METRICS_FILE, HISTORY_FILE, MI_MATRIX_FILE, CHECKPOINT_FILE]
        .iter()
        .all(|f| fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap());
    let reloaded = evaluate_run(&a).unwrap();
    let bits = |r: &larvae::metrics::MetricsReport| {
        let mut v = vec![r.mig.to_bits(), r.l2.to_bits(), r.factorvae_score.to_bits()];
        v.extend(r.mi_matrix.iter().flatten().map(|x| x.to_bits()));
        v
    };
    let reload_exact = bits(&reloaded) == bits(&first.final_report);
    outcome(
        identical && reload_exact,
        format!("rerun byte-identical: {identical}; checkpoint reload evaluate bit-exact: {reload_exact}"),
    )
}
