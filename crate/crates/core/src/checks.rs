//! Finite-difference suites over every tape operation and every loss term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::gradcheck::grad_check_with_fault;
use crate::autodiff::{ConvGeom, OpKind, Tape, Tensor, Var};
use crate::error::Result;
use crate::losses::{
    elbo_terms, kl_term, label_recon_term, label_replacement_term, nll_term, tc_mws_term,
    Discriminator,
};
use crate::model::{LatentPartition, Vae};
use crate::nn::{Architecture, Bound, ParamSet};

pub const DEFAULT_INSTANCES: usize = 20;
pub const EXACT_TOL: f64 = 1e-4;
/// Tolerance for the total-correlation terms.
pub const STOCHASTIC_TOL: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
    /// Coordinates not compared because the step crossed a rectifier kink.
    pub skipped: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteReport {
    pub results: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.results
            .iter()
            .filter(|r| !r.passed)
            .map(|r| r.name.as_str())
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<22} {:>9} {:>12} {:>8} {:>7} {:>8}  status\n",
            "check", "instances", "max_rel_err", "tol", "skipped", "seconds"
        );
        for r in &self.results {
            out.push_str(&format!(
                "{:<22} {:>9} {:>12.3e} {:>8.0e} {:>7} {:>8.2}  {}\n",
                r.name,
                r.instances,
                r.max_rel_err,
                r.tol,
                r.skipped,
                r.seconds,
                if r.passed { "ok" } else { "FAIL" }
            ));
        }
        out
    }
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

struct Case {
    inputs: Vec<Tensor>,
    f: Build,
}

fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.sample(StandardNormal))
}

/// Values bounded away from zero, for kinks at the origin.
fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = 0.1 + rng.gen::<f64>();
        if rng.gen::<bool>() {
            m
        } else {
            -m
        }
    })
}

fn positive(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(0.5..2.0))
}

/// Reduces `out` to `sum(out * w)` with a fixed random `w`, so that every
/// output element carries a distinct weight.
fn project(tape: &mut Tape, out: Var, w: &Tensor) -> Result<Var> {
    let wv = tape.constant(w.clone());
    let p = tape.mul(out, wv)?;
    Ok(tape.sum(p))
}

fn projected(out_shape: &[usize], weight_seed: u64, inputs: Vec<Tensor>, body: Build) -> Case {
    let w = normal(out_shape, &mut ChaCha8Rng::seed_from_u64(weight_seed));
    Case {
        inputs,
        f: Box::new(move |t, v| {
            let out = body(t, v)?;
            project(t, out, &w)
        }),
    }
}

fn op_case(kind: OpKind, rng: &mut ChaCha8Rng) -> Case {
    let r = rng;
    match kind {
        OpKind::Add => {
            let ins = vec![normal(&[3, 4], r), normal(&[4], r)];
            projected(&[3, 4], r.gen(), ins, Box::new(|t, v| t.add(v[0], v[1])))
        }
        OpKind::Sub => {
            let ins = vec![normal(&[3, 4], r), normal(&[3, 4], r)];
            projected(&[3, 4], r.gen(), ins, Box::new(|t, v| t.sub(v[0], v[1])))
        }
        OpKind::Mul => {
            let ins = vec![normal(&[3, 4], r), normal(&[4], r)];
            projected(&[3, 4], r.gen(), ins, Box::new(|t, v| t.mul(v[0], v[1])))
        }
        OpKind::Scale => {
            let c: f64 = r.sample(StandardNormal);
            projected(
                &[2, 5],
                r.gen(),
                vec![normal(&[2, 5], r)],
                Box::new(move |t, v| Ok(t.scale(v[0], c))),
            )
        }
        OpKind::Offset => {
            let c: f64 = r.sample(StandardNormal);
            let ins = vec![normal(&[2, 5], r)];
            projected(
                &[2, 5],
                r.gen(),
                ins,
                Box::new(move |t, v| {
                    let o = t.offset(v[0], c);
                    Ok(t.square(o))
                }),
            )
        }
        OpKind::MatMul => {
            let ins = vec![normal(&[3, 5], r), normal(&[5, 4], r)];
            projected(&[3, 4], r.gen(), ins, Box::new(|t, v| t.matmul(v[0], v[1])))
        }
        OpKind::Conv2d => {
            let ins = vec![
                normal(&[2, 2, 6, 6], r),
                normal(&[3, 2, 4, 4], r),
                normal(&[3], r),
            ];
            let geom = ConvGeom {
                stride: 2,
                padding: 1,
            };
            projected(
                &[2, 3, 3, 3],
                r.gen(),
                ins,
                Box::new(move |t, v| t.conv2d(v[0], v[1], Some(v[2]), geom)),
            )
        }
        OpKind::ConvTranspose2d => {
            let ins = vec![
                normal(&[2, 3, 3, 3], r),
                normal(&[3, 2, 4, 4], r),
                normal(&[2], r),
            ];
            let geom = ConvGeom {
                stride: 2,
                padding: 1,
            };
            projected(
                &[2, 2, 6, 6],
                r.gen(),
                ins,
                Box::new(move |t, v| t.conv_transpose2d(v[0], v[1], Some(v[2]), geom)),
            )
        }
        OpKind::Relu => projected(
            &[3, 4],
            r.gen(),
            vec![off_zero(&[3, 4], r)],
            Box::new(|t, v| Ok(t.relu(v[0]))),
        ),
        OpKind::Exp => projected(
            &[3, 4],
            r.gen(),
            vec![normal(&[3, 4], r)],
            Box::new(|t, v| Ok(t.exp(v[0]))),
        ),
        OpKind::Log => projected(
            &[3, 4],
            r.gen(),
            vec![positive(&[3, 4], r)],
            Box::new(|t, v| t.log(v[0])),
        ),
        OpKind::Square => projected(
            &[3, 4],
            r.gen(),
            vec![normal(&[3, 4], r)],
            Box::new(|t, v| Ok(t.square(v[0]))),
        ),
        OpKind::Sigmoid => projected(
            &[3, 4],
            r.gen(),
            vec![normal(&[3, 4], r)],
            Box::new(|t, v| Ok(t.sigmoid(v[0]))),
        ),
        OpKind::Softplus => {
            let scaled = Tensor::from_fn([3, 4], |_| 4.0 * r.sample::<f64, _>(StandardNormal));
            projected(
                &[3, 4],
                r.gen(),
                vec![scaled],
                Box::new(|t, v| Ok(t.softplus(v[0]))),
            )
        }
        OpKind::Sum => {
            let ins = vec![normal(&[3, 4], r)];
            projected(
                &[],
                r.gen(),
                ins,
                Box::new(|t, v| {
                    let s = t.square(v[0]);
                    Ok(t.sum(s))
                }),
            )
        }
        OpKind::SumAxis => {
            let axis = r.gen_range(0..2);
            let out = if axis == 0 { [4] } else { [3] };
            projected(
                &out,
                r.gen(),
                vec![normal(&[3, 4], r)],
                Box::new(move |t, v| t.sum_axis(v[0], axis)),
            )
        }
        OpKind::Mean => {
            let ins = vec![normal(&[3, 4], r)];
            projected(
                &[],
                r.gen(),
                ins,
                Box::new(|t, v| {
                    let s = t.square(v[0]);
                    Ok(t.mean(s))
                }),
            )
        }
        OpKind::Broadcast => projected(
            &[3, 4],
            r.gen(),
            vec![normal(&[4], r)],
            Box::new(|t, v| t.broadcast(v[0], &[3, 4])),
        ),
        OpKind::Concat => {
            let ins = vec![normal(&[3, 2], r), normal(&[3, 4], r)];
            projected(
                &[3, 6],
                r.gen(),
                ins,
                Box::new(|t, v| t.concat(&[v[0], v[1]])),
            )
        }
        OpKind::Slice => projected(
            &[3, 3],
            r.gen(),
            vec![normal(&[3, 5], r)],
            Box::new(|t, v| t.slice(v[0], 1, 4)),
        ),
        OpKind::LogSumExp => {
            let axis = r.gen_range(0..2);
            let out = if axis == 0 { [4] } else { [3] };
            projected(
                &out,
                r.gen(),
                vec![normal(&[3, 4], r)],
                Box::new(move |t, v| t.logsumexp(v[0], axis)),
            )
        }
        OpKind::Reshape => {
            let ins = vec![normal(&[3, 4], r)];
            projected(
                &[2, 6],
                r.gen(),
                ins,
                Box::new(|t, v| {
                    let s = t.reshape(v[0], &[2, 6])?;
                    Ok(t.square(s))
                }),
            )
        }
        OpKind::PairwiseSub => {
            let ins = vec![normal(&[3, 2], r), normal(&[4, 2], r)];
            projected(
                &[3, 4, 2],
                r.gen(),
                ins,
                Box::new(|t, v| t.pairwise_sub(v[0], v[1])),
            )
        }
        OpKind::InstanceNorm => projected(
            &[2, 3, 4, 4],
            r.gen(),
            vec![normal(&[2, 3, 4, 4], r)],
            Box::new(|t, v| t.instance_norm(v[0], 1e-5)),
        ),
        OpKind::Leaf => unreachable!("leaves have no backward rule"),
    }
}

fn tiny_vae(dim_z: usize) -> Vae {
    Vae::new(
        Architecture::Mlp,
        [1, 2, 2],
        LatentPartition::new(2, dim_z).expect("partition"),
        0.5,
    )
    .expect("tiny model")
}

/// Model parameters as gradcheck inputs, plus a way to rebind them.
fn model_inputs(params: &ParamSet) -> (Vec<String>, Vec<Tensor>) {
    params.iter().map(|(k, v)| (k.clone(), v.clone())).unzip()
}

fn rebind(names: &[String], vars: &[Var]) -> Bound {
    Bound::from_pairs(names.iter().cloned().zip(vars.iter().copied()))
}

fn images(b: usize, p: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn([b, p], |_| rng.gen::<f64>())
}

/// Names of the loss-term checks, in report order.
pub const LOSS_CHECKS: [&str; 7] = [
    "loss:nll",
    "loss:kl",
    "loss:elbo_model",
    "loss:tc_mws",
    "loss:tc_adversarial",
    "loss:label_recon",
    "loss:label_replacement",
];

fn loss_case(name: &str, rng: &mut ChaCha8Rng) -> (Case, f64) {
    let r = rng;
    let sigma2 = r.gen_range(0.2..2.0);
    match name {
        "loss:nll" => {
            let ins = vec![images(4, 6, r), normal(&[4, 6], r)];
            let f: Build = Box::new(move |t, v| nll_term(t, v[0], v[1], sigma2));
            (Case { inputs: ins, f }, EXACT_TOL)
        }
        "loss:kl" => {
            let f: Build = Box::new(move |t, v| kl_term(t, v[0], sigma2));
            (
                Case {
                    inputs: vec![normal(&[4, 3], r)],
                    f,
                },
                EXACT_TOL,
            )
        }
        "loss:elbo_model" => {
            let vae = tiny_vae(1);
            let (names, ins) = model_inputs(&vae.init_params_with(r));
            let x = images(3, vae.pixels(), r);
            let eps = normal(&[3, vae.latent_dim()], r);
            let f: Build = Box::new(move |t, v| {
                let bound = rebind(&names, v);
                let xv = t.constant(x.clone());
                let e = elbo_terms(t, &vae, &bound, xv, eps.clone())?;
                t.add(e.nll, e.kl)
            });
            (Case { inputs: ins, f }, EXACT_TOL)
        }
        "loss:tc_mws" => {
            let n = r.gen_range(8..200);
            let ins = vec![normal(&[5, 3], r), normal(&[5, 3], r)];
            let f: Build = Box::new(move |t, v| tc_mws_term(t, v[0], v[1], sigma2, n));
            (Case { inputs: ins, f }, STOCHASTIC_TOL)
        }
        "loss:tc_adversarial" => {
            let disc = Discriminator::new(3);
            let (names, mut ins) = model_inputs(&disc.init_params(r));
            ins.push(normal(&[5, 3], r));
            let f: Build = Box::new(move |t, v| {
                let (pv, lat) = v.split_at(v.len() - 1);
                let bound = rebind(&names, pv);
                disc.tc_term(t, &bound, lat[0])
            });
            (Case { inputs: ins, f }, STOCHASTIC_TOL)
        }
        "loss:label_recon" => {
            let ins = vec![normal(&[4, 3], r), normal(&[4, 3], r)];
            let f: Build = Box::new(|t, v| label_recon_term(t, v[0], v[1]));
            (Case { inputs: ins, f }, EXACT_TOL)
        }
        "loss:label_replacement" => {
            let vae = tiny_vae(1);
            let (names, ins) = model_inputs(&vae.init_params_with(r));
            let x = images(3, vae.pixels(), r);
            let y = Tensor::from_fn([3, 2], |_| r.gen_range(-1.0..1.0));
            let eps = normal(&[3, 1], r);
            let f: Build = Box::new(move |t, v| {
                let bound = rebind(&names, v);
                let xv = t.constant(x.clone());
                let yv = t.constant(y.clone());
                Ok(label_replacement_term(t, &vae, &bound, xv, yv, Some(eps.clone()))?.total)
            });
            (Case { inputs: ins, f }, EXACT_TOL)
        }
        other => unreachable!("unknown loss check {other}"),
    }
}

fn run_cases(
    name: String,
    instances: usize,
    fault: Option<OpKind>,
    mut make: impl FnMut(usize) -> (Case, f64),
) -> Result<CheckResult> {
    let start = std::time::Instant::now();
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    let mut tol = EXACT_TOL;
    for i in 0..instances {
        let (case, t) = make(i);
        tol = t;
        let report =
            grad_check_with_fault(|tape, v| (case.f)(tape, v), &case.inputs, FD_STEP, t, fault)?;
        worst = worst.max(report.max_rel_err);
        skipped += report.skipped;
    }
    Ok(CheckResult {
        name,
        instances,
        max_rel_err: worst,
        tol,
        passed: worst < tol,
        skipped,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn case_rng(seed: u64, check: usize, instance: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((check as u64) << 32) | instance as u64);
    rng
}

/// One check per differentiable operation.
pub fn op_suite(instances: usize, seed: u64, fault: Option<OpKind>) -> Result<Vec<CheckResult>> {
    OpKind::ALL
        .iter()
        .enumerate()
        .map(|(ci, &kind)| {
            run_cases(format!("op:{}", kind.name()), instances, fault, |i| {
                (op_case(kind, &mut case_rng(seed, ci, i)), EXACT_TOL)
            })
        })
        .collect()
}

/// One check per loss term; the model-level terms differentiate through a
/// tiny fully connected model.
pub fn loss_suite(instances: usize, seed: u64, fault: Option<OpKind>) -> Result<Vec<CheckResult>> {
    LOSS_CHECKS
        .iter()
        .enumerate()
        .map(|(ci, &name)| {
            run_cases(name.to_string(), instances, fault, |i| {
                loss_case(name, &mut case_rng(seed, 1000 + ci, i))
            })
        })
        .collect()
}

pub fn run_all(instances: usize, seed: u64, fault: Option<OpKind>) -> Result<SuiteReport> {
    let mut results = op_suite(instances, seed, fault)?;
    results.extend(loss_suite(instances, seed, fault)?);
    Ok(SuiteReport { results })
}
