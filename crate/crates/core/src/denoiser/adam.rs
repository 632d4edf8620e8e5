//! Adam with bias correction. Parameters and moments are rounded to 32-bit
//! float values after every update so checkpoints round-trip bitwise.

use super::round_f32;
use super::tape::Tensor;
use super::DenoiserParams;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &DenoiserParams) -> Self {
        let zeros = || params.shapes().iter().map(|&(r, c)| Tensor::zeros(r, c)).collect();
        AdamState { step: 0, m: zeros(), v: zeros() }
    }
}

pub fn adam_step(params: &mut DenoiserParams, grads: &[Tensor], state: &mut AdamState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (k, p) in params.tensors_mut().iter_mut().enumerate() {
        let (g, m, v) = (&grads[k].data, &mut state.m[k].data, &mut state.v[k].data);
        for i in 0..p.data.len() {
            m[i] = round_f32(ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i]);
            v[i] = round_f32(ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i]);
            let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            p.data[i] = round_f32(p.data[i] - update);
        }
    }
}
