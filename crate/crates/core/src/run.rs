//! Run directories, sweeps and traversal images on disk.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::{RunConfig, RESOLVED_CONFIG_FILE};
use crate::data::FactorDataset;
use crate::error::{Error, Result};
use crate::image::{hstack, pnm_extension, write_pnm};
use crate::metrics::MetricsReport;
use crate::model::{load_checkpoint, save_checkpoint, Vae};
use crate::nn::ParamSet;
use crate::train::{evaluate, history_csv, run_pool, train, traverse, TrainOutcome, Traversal};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MI_MATRIX_FILE: &str = "mi_matrix.csv";

/// Keys a sweep may vary.
pub const SWEEP_KEYS: [&str; 4] = ["tau", "dim_z", "eta", "seed"];

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn factor_names(dataset: &FactorDataset) -> Vec<String> {
    dataset
        .spec
        .factors
        .iter()
        .map(|f| f.name.clone())
        .collect()
}

/// Trains one configuration and writes its run directory.
pub fn train_run(cfg: &RunConfig) -> Result<TrainOutcome> {
    let dataset = cfg.dataset.load()?;
    train_run_on(cfg, &dataset)
}

/// [`train_run`] on an already loaded dataset.
pub fn train_run_on(cfg: &RunConfig, dataset: &FactorDataset) -> Result<TrainOutcome> {
    let cfg = cfg.clone().resolved()?;
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(RESOLVED_CONFIG_FILE), &cfg.to_text())?;
    let pool = if cfg.train.uses_labels() {
        Some(run_pool(dataset, &cfg.train)?)
    } else {
        None
    };
    let outcome = train(dataset, pool.as_ref(), &cfg.train)?;
    save_checkpoint(dir.join(CHECKPOINT_FILE), &outcome.params)?;
    write(&dir.join(HISTORY_FILE), &history_csv(&outcome.history))?;
    write_metrics(dir, &outcome.final_report, dataset)?;
    Ok(outcome)
}

fn write_metrics(dir: &Path, report: &MetricsReport, dataset: &FactorDataset) -> Result<()> {
    write(&dir.join(METRICS_FILE), &report.to_csv())?;
    write(
        &dir.join(MI_MATRIX_FILE),
        &report.mi_matrix_csv(&factor_names(dataset)),
    )
}

/// A trained model restored from a run directory.
#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub config: RunConfig,
    pub dataset: FactorDataset,
    pub vae: Vae,
    pub params: ParamSet,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let config = RunConfig::load(dir.join(RESOLVED_CONFIG_FILE))?;
    let dataset = config.dataset.load()?;
    let vae = config.train.model(&dataset)?;
    let params = load_checkpoint(dir.join(CHECKPOINT_FILE))?;
    vae.check_params(&params)?;
    Ok(LoadedRun {
        config,
        dataset,
        vae,
        params,
    })
}

/// Recomputes the final metrics of a run directory from its checkpoint.
pub fn evaluate_run(dir: &Path) -> Result<MetricsReport> {
    let run = load_run(dir)?;
    evaluate(
        &run.vae,
        &run.params,
        &run.dataset,
        &run.config.train.eval_config(),
    )
}

/// [`evaluate_run`], writing the metric files into `out`.
pub fn evaluate_run_into(dir: &Path, out: &Path) -> Result<MetricsReport> {
    let run = load_run(dir)?;
    let report = evaluate(
        &run.vae,
        &run.params,
        &run.dataset,
        &run.config.train.eval_config(),
    )?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_metrics(out, &report, &run.dataset)?;
    Ok(report)
}

/// Final metrics of one sweep run.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRun {
    pub value: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub mig: f64,
    pub l2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub final_mig: f64,
    pub final_l2: f64,
    pub mig_std: f64,
    pub l2_std: f64,
    pub n_seeds: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub key: String,
    pub runs: Vec<SweepRun>,
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_HEADER: &str = "value,final_mig,final_l2,mig_std,l2_std,n_seeds";

impl SweepSummary {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{SWEEP_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.value, r.final_mig, r.final_l2, r.mig_std, r.l2_std, r.n_seeds
            ));
        }
        out
    }

    pub fn csv_name(&self) -> String {
        format!("sweep_{}.csv", self.key)
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Directory of one sweep run below the base config's `out_dir`.
pub fn sweep_run_dir(base: &Path, key: &str, value: &str, seed: Option<u64>) -> PathBuf {
    let d = base.join(format!("{key}_{value}"));
    match seed {
        Some(s) => d.join(format!("seed_{s}")),
        None => d,
    }
}

/// Trains `base` once per value (and per seed when `seeds` is non-empty),
/// running up to `jobs` trainings at a time, and writes the summary CSV
/// into the base `out_dir`.
pub fn sweep(
    base: &RunConfig,
    key: &str,
    values: &[String],
    seeds: &[u64],
    jobs: usize,
) -> Result<SweepSummary> {
    if !SWEEP_KEYS.contains(&key) {
        return Err(Error::Config(format!(
            "cannot sweep `{key}`; expected one of {}",
            SWEEP_KEYS.join(", ")
        )));
    }
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let dataset = base.dataset.load()?;
    let mut plan = Vec::new();
    for v in values {
        let seed_list: Vec<Option<u64>> = if seeds.is_empty() {
            vec![None]
        } else {
            seeds.iter().copied().map(Some).collect()
        };
        for s in seed_list {
            let mut cfg = base.clone();
            cfg.set(key, v)?;
            if let Some(s) = s {
                cfg.train.seed = s;
            }
            cfg.out_dir = sweep_run_dir(&base.out_dir, key, v, s);
            plan.push((v.clone(), cfg.resolved()?));
        }
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SweepRun>>>> =
        Mutex::new((0..plan.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, plan.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((value, cfg)) = plan.get(i) else {
                    break;
                };
                let r = train_run_on(cfg, &dataset).map(|o| SweepRun {
                    value: value.clone(),
                    seed: cfg.train.seed,
                    dir: cfg.out_dir.clone(),
                    mig: o.final_report.mig,
                    l2: o.final_report.l2,
                });
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    let runs = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every planned run executed"))
        .collect::<Result<Vec<_>>>()?;

    let rows = values
        .iter()
        .map(|v| {
            let of: Vec<&SweepRun> = runs.iter().filter(|r| &r.value == v).collect();
            let migs: Vec<f64> = of.iter().map(|r| r.mig).collect();
            let l2s: Vec<f64> = of.iter().map(|r| r.l2).collect();
            let (final_mig, mig_std) = mean_std(&migs);
            let (final_l2, l2_std) = mean_std(&l2s);
            SweepRow {
                value: v.clone(),
                final_mig,
                final_l2,
                mig_std,
                l2_std,
                n_seeds: of.len(),
            }
        })
        .collect();
    let summary = SweepSummary {
        key: key.to_string(),
        runs,
        rows,
    };
    fs::create_dir_all(&base.out_dir).map_err(|e| Error::io(&base.out_dir, e))?;
    write(&base.out_dir.join(summary.csv_name()), &summary.to_csv())?;
    Ok(summary)
}

/// File name of one traversal cell; step 0 is the reference image.
pub fn traversal_file(item: usize, dim: usize, step: usize, channels: usize) -> String {
    format!("trav_{item}_{dim}_{step}.{}", pnm_extension(channels))
}

pub fn traversal_strip_file(item: usize, dim: usize, channels: usize) -> String {
    format!("trav_{item}_{dim}_strip.{}", pnm_extension(channels))
}

/// Decodes a label traversal from a checkpoint and writes one image per
/// cell plus the combined strip. Returns the written paths, strip last.
pub fn traverse_to_dir(
    checkpoint: &Path,
    dataset: &FactorDataset,
    item: usize,
    dim: usize,
    steps: usize,
    out: &Path,
) -> Result<(Traversal, Vec<PathBuf>)> {
    let params = load_checkpoint(checkpoint)?;
    let shape = dataset.spec.image_shape;
    let vae = Vae::from_params(
        &params,
        shape,
        dataset.num_factors(),
        crate::losses::SemiLossConfig::default().sigma2,
    )
    .map_err(|e| Error::Invalid(format!("checkpoint does not match dataset: {e}")))?;
    let trav = traverse(&vae, &params, dataset, item, dim, steps)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let c = shape[0];
    let mut paths = Vec::with_capacity(steps + 2);
    for (step, cell) in trav.cells().enumerate() {
        let p = out.join(traversal_file(item, dim, step, c));
        write_pnm(&p, shape, cell)?;
        paths.push(p);
    }
    let cells: Vec<&[f64]> = trav.cells().collect();
    let (strip, strip_shape) = hstack(shape, &cells)?;
    let p = out.join(traversal_strip_file(item, dim, c));
    write_pnm(&p, strip_shape, &strip)?;
    paths.push(p);
    Ok((trav, paths))
}
