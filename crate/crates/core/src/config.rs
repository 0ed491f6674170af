//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored, unknown or repeated keys are
//! errors, and `dataset` is the only required key.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{FactorDataset, Preset};
use crate::error::{Error, Result};
use crate::losses::{CoefMode, RuKind};
use crate::nn::Architecture;
use crate::train::TrainConfig;

/// Every accepted key, sorted.
pub const KEYS: &[&str] = &[
    "alpha",
    "arch",
    "batch_size",
    "coef_mode",
    "dataset",
    "dim_z",
    "disc_learning_rate",
    "eta",
    "eval_every",
    "fvae_batch",
    "fvae_votes",
    "gamma",
    "gamma_tc",
    "iterations",
    "lambda",
    "learning_rate",
    "mig_bins",
    "out_dir",
    "ru_kind",
    "seed",
    "sigma2",
    "tau",
];

pub const RESOLVED_CONFIG_FILE: &str = "resolved-config.txt";

/// A named preset or a dataset file written by `gen-data`.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Preset(Preset),
    File(PathBuf),
}

impl DatasetSource {
    pub fn load(&self) -> Result<FactorDataset> {
        match self {
            DatasetSource::Preset(p) => Ok(p.generate()),
            DatasetSource::File(path) => FactorDataset::load(path),
        }
    }
}

impl FromStr for DatasetSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::Config("empty dataset".into()));
        }
        Ok(match s.parse::<Preset>() {
            Ok(p) => DatasetSource::Preset(p),
            Err(_) => DatasetSource::File(PathBuf::from(s)),
        })
    }
}

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSource::Preset(p) => write!(f, "{p}"),
            DatasetSource::File(path) => write!(f, "{}", path.display()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))
}

impl RunConfig {
    pub fn new(dataset: DatasetSource) -> Self {
        Self {
            dataset,
            out_dir: PathBuf::from("run"),
            train: TrainConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut dataset = None;
        let mut seen: Vec<String> = Vec::new();
        let mut pending = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    no + 1
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!(
                    "line {}: unknown key `{key}`",
                    no + 1
                )));
            }
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{key}`",
                    no + 1
                )));
            }
            seen.push(key.to_string());
            if key == "dataset" {
                dataset = Some(value.parse::<DatasetSource>()?);
            } else {
                pending.push((key.to_string(), value.to_string()));
            }
        }
        let dataset =
            dataset.ok_or_else(|| Error::Config("missing required key `dataset`".into()))?;
        let mut cfg = Self::new(dataset);
        for (k, v) in pending {
            cfg.set(&k, &v)?;
        }
        cfg.resolved()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let v = value;
        match key {
            "dataset" => self.dataset = v.parse()?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "iterations" => t.iterations = parse_value(key, v)?,
            "batch_size" => t.batch_size = parse_value(key, v)?,
            "learning_rate" => t.learning_rate = parse_value(key, v)?,
            "eta" => t.eta = parse_value(key, v)?,
            "seed" => t.seed = parse_value(key, v)?,
            "eval_every" => t.eval_every = parse_value(key, v)?,
            "dim_z" => t.dim_z = parse_value(key, v)?,
            "arch" => t.arch = Architecture::parse(v)?,
            "disc_learning_rate" => t.disc_learning_rate = parse_value(key, v)?,
            "fvae_votes" => t.fvae_votes = parse_value(key, v)?,
            "fvae_batch" => t.fvae_batch = parse_value(key, v)?,
            "mig_bins" => t.mig_bins = parse_value(key, v)?,
            "ru_kind" => t.loss.ru_kind = v.parse()?,
            "coef_mode" => t.loss.coef_mode = v.parse()?,
            "gamma_tc" => t.loss.gamma_tc = parse_value(key, v)?,
            "gamma" => t.loss.gamma = parse_value(key, v)?,
            "lambda" => t.loss.lambda = parse_value(key, v)?,
            "alpha" => t.loss.alpha = parse_value(key, v)?,
            "tau" => t.loss.tau = parse_value(key, v)?,
            "sigma2" => t.loss.sigma2 = parse_value(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let l = &t.loss;
        Some(match key {
            "dataset" => self.dataset.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "iterations" => t.iterations.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "learning_rate" => t.learning_rate.to_string(),
            "eta" => t.eta.to_string(),
            "seed" => t.seed.to_string(),
            "eval_every" => t.eval_every.to_string(),
            "dim_z" => t.dim_z.to_string(),
            "arch" => t.arch.name().to_string(),
            "disc_learning_rate" => t.disc_learning_rate.to_string(),
            "fvae_votes" => t.fvae_votes.to_string(),
            "fvae_batch" => t.fvae_batch.to_string(),
            "mig_bins" => t.mig_bins.to_string(),
            "ru_kind" => RuKind::name(l.ru_kind).to_string(),
            "coef_mode" => CoefMode::name(l.coef_mode).to_string(),
            "gamma_tc" => l.gamma_tc.to_string(),
            "gamma" => l.gamma.to_string(),
            "lambda" => l.lambda.to_string(),
            "alpha" => l.alpha.to_string(),
            "tau" => l.tau.to_string(),
            "sigma2" => l.sigma2.to_string(),
            _ => return None,
        })
    }

    pub fn resolved(mut self) -> Result<Self> {
        self.train = self.train.resolved()?;
        Ok(self)
    }

    /// Every key with its resolved value, one `key = value` line each, sorted.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }
}
