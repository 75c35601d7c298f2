use crate::error::{mismatch, Result};
use crate::train::ParameterSet;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` at learning rate `lr`.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &ParameterSet,
    state: &mut AdamState,
    config: &AdamConfig,
    lr: f64,
) -> Result<()> {
    if !params.same_layout(grads) || state.m.len() != params.num_values() {
        return Err(mismatch("adam_step", "parameters, gradients and state disagree"));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    let mut i = 0;
    for (p, g) in params.arrays_mut().iter_mut().zip(grads.arrays()) {
        for (x, &gv) in p.values.iter_mut().zip(&g.values) {
            let m = &mut state.m[i];
            let v = &mut state.v[i];
            *m = config.beta1 * *m + (1.0 - config.beta1) * gv;
            *v = config.beta2 * *v + (1.0 - config.beta2) * gv * gv;
            *x -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            i += 1;
        }
    }
    Ok(())
}

/// `lr₀ · factor^⌊epoch / every⌋`.
pub fn decayed_learning_rate(base: f64, epoch: usize, every: usize, factor: f64) -> f64 {
    if every == 0 {
        return base;
    }
    base * factor.powi((epoch / every) as i32)
}
