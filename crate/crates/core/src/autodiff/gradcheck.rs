//! Central finite-difference verification of tape gradients.

use super::{OpKind, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Below this magnitude gradients are compared absolutely rather than relatively.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest relative error over the elements of each parameter.
    pub per_param: Vec<f64>,
    pub max_rel_err: f64,
    /// Coordinates whose perturbation flipped a rectifier, where central
    /// differences do not estimate the derivative; they are not compared.
    pub skipped: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Relative error used throughout: `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares tape gradients of the scalar `f` against central differences
/// with the given `step`.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_with_fault(f, params, step, tol, None)
}

/// [`grad_check`] with an optional corrupted backward rule on the analytic side.
pub fn grad_check_with_fault<F>(
    f: F,
    params: &[Tensor],
    step: f64,
    tol: f64,
    fault: Option<OpKind>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    if let Some(kind) = fault {
        tape.inject_fault(kind);
    }
    let vars: Vec<Var> = params.iter().map(|p| tape.parameter(p.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let f0 = tape.value(root).item();
    let pattern = tape.relu_pattern();
    if !f0.is_finite() {
        return Err(Error::NonFinite {
            term: "grad_check objective".to_string(),
        });
    }
    tape.backward(root)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("parameter grad"))
        .collect();

    let eval = |ps: &[Tensor]| -> Result<(f64, bool)> {
        let mut t = Tape::new();
        let vs: Vec<Var> = ps.iter().map(|p| t.constant(p.clone())).collect();
        let r = f(&mut t, &vs)?;
        let v = t.value(r).item();
        if v.is_finite() {
            Ok((v, t.relu_pattern() == pattern))
        } else {
            Err(Error::NonFinite {
                term: "grad_check perturbed objective".to_string(),
            })
        }
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    let mut skipped = 0;
    for (pi, grad) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for k in 0..params[pi].numel() {
            let orig = params[pi].data()[k];
            work[pi].data_mut()[k] = orig + step;
            let (plus, same_plus) = eval(&work)?;
            work[pi].data_mut()[k] = orig - step;
            let (minus, same_minus) = eval(&work)?;
            work[pi].data_mut()[k] = orig;
            if !(same_plus && same_minus) {
                skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(rel_err(grad.data()[k], numeric));
        }
        per_param.push(worst);
    }
    let max_rel_err = per_param.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_rel_err,
        skipped,
        tol,
        passed: max_rel_err < tol,
    })
}
