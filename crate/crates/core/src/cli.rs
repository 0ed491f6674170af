//! Command-line front end; the binary only forwards `std::env::args` here.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::autodiff::OpKind;
use crate::checks::{run_all, DEFAULT_INSTANCES};
use crate::config::{DatasetSource, RunConfig};
use crate::data::Preset;
use crate::error::{Error, Result};
use crate::run::{evaluate_run, evaluate_run_into, sweep, train_run, traverse_to_dir};

#[derive(Debug, Parser)]
#[command(
    name = "larvae",
    version,
    about = "Semi-supervised disentangling VAEs on synthetic factor datasets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a preset dataset to a file.
    GenData {
        #[arg(long)]
        preset: String,
        /// Accepted for reproducible scripts; presets are fully deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
    /// Train one configuration into its `out_dir`.
    Train {
        config: PathBuf,
        /// Overrides `out_dir` from the config file.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Recompute the metrics of a run directory from its checkpoint.
    Evaluate {
        run_dir: PathBuf,
        /// Also write metrics.csv and mi_matrix.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train once per value of `key`, then write `sweep_<key>.csv`.
    Sweep {
        config: PathBuf,
        /// One of tau, dim_z, eta, seed.
        key: String,
        #[arg(required = true, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
        /// Repeat every value over these seeds and report mean and std.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Concurrent trainings.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Decode a label traversal to PGM/PPM images.
    Traverse {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Preset name or dataset file.
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        item: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
    /// Finite-difference check of every operation and loss term.
    Gradcheck {
        #[arg(long, default_value_t = DEFAULT_INSTANCES)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt one backward rule to exercise the failure path.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn emit(out: &mut impl Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

/// Executes one parsed command, writing human output to `out`.
pub fn execute(cli: Cli, out: &mut impl Write) -> Result<()> {
    match cli.command {
        Command::GenData {
            preset,
            seed: _,
            out: path,
        } => {
            let preset: Preset = preset.parse()?;
            let d = preset.generate();
            d.save(&path)?;
            emit(
                out,
                &format!(
                    "wrote {} items of {preset} to {}\n",
                    d.len(),
                    path.display()
                ),
            )
        }
        Command::Train { config, out_dir } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            let o = train_run(&cfg)?;
            emit(out, &format!("run written to {}\n", cfg.out_dir.display()))?;
            emit(out, &o.final_report.to_csv())
        }
        Command::Evaluate { run_dir, out: dest } => {
            let report = match dest {
                Some(d) => evaluate_run_into(&run_dir, &d)?,
                None => evaluate_run(&run_dir)?,
            };
            emit(out, &report.to_csv())
        }
        Command::Sweep {
            config,
            key,
            values,
            seeds,
            jobs,
        } => {
            let cfg = RunConfig::load(&config)?;
            let s = sweep(&cfg, &key, &values, &seeds, jobs)?;
            emit(out, &s.to_csv())
        }
        Command::Traverse {
            checkpoint,
            dataset,
            item,
            dim,
            steps,
            out: dir,
        } => {
            let d = dataset.parse::<DatasetSource>()?.load()?;
            let (_, paths) = traverse_to_dir(&checkpoint, &d, item, dim, steps, &dir)?;
            let list: String = paths.iter().map(|p| format!("{}\n", p.display())).collect();
            emit(out, &list)
        }
        Command::Gradcheck {
            instances,
            seed,
            inject_fault,
        } => {
            let fault = match inject_fault {
                Some(name) => Some(
                    OpKind::from_name(&name)
                        .ok_or_else(|| Error::Invalid(format!("unknown op `{name}`")))?,
                ),
                None => None,
            };
            let report = run_all(instances, seed, fault)?;
            emit(out, &report.to_text())?;
            if report.passed() {
                Ok(())
            } else {
                Err(Error::CheckFailed(report.failures().join(", ")))
            }
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli, &mut std::io::stdout().lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(main_with(["larvae", "frobnicate"]), 2);
        assert_eq!(
            main_with(["larvae", "gen-data", "--preset", "nope", "-o", "/tmp/never"]),
            2
        );
        assert_eq!(main_with(["larvae", "sweep", "c.txt", "tau"]), 2);
    }

    #[test]
    fn help_is_not_an_error() {
        let e = Cli::try_parse_from(["larvae", "--help"]).unwrap_err();
        assert_eq!(e.kind(), clap::error::ErrorKind::DisplayHelp);
        assert!(!e.use_stderr());
    }

    #[test]
    fn sweep_values_split_on_commas() {
        let cli = Cli::try_parse_from([
            "larvae", "sweep", "c.txt", "tau", "0,0.1", "1", "--seeds", "1,2",
        ])
        .unwrap();
        match cli.command {
            Command::Sweep { values, seeds, .. } => {
                assert_eq!(values, ["0", "0.1", "1"]);
                assert_eq!(seeds, [1, 2]);
            }
            other => panic!("{other:?}"),
        }
    }
}
