//! Adam with bias correction.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::ParamSet;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moments shaped like the parameters, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || {
            let mut z = ParamSet::new();
            for (k, t) in params.iter() {
                z.insert(k.clone(), Tensor::zeros(t.shape().to_vec()));
            }
            z
        };
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One update of every parameter in `params` from the matching entry of `grads`.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Invalid(format!(
            "adam: {} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("adam: no gradient for `{name}`")))?;
        let m = state.m.get(name);
        if g.shape() != p.shape() || m.map(|m| m.shape()) != Some(p.shape()) {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name).expect("checked").data();
        let m = state.m.get_mut(name).expect("checked").data_mut();
        let v = state.v.get_mut(name).expect("checked").data_mut();
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= lr * mhat / (vhat.sqrt() + EPSILON);
        }
    }
    Ok(())
}
