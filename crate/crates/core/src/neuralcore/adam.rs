//! Adam with bias correction.
//!
//! Moments and update arithmetic are double precision; parameters stay
//! single precision. That keeps short trajectories matching a scalar
//! reference to f32 rounding instead of drifting.

use super::Tensor;

/// Per-parameter first/second moment accumulators and a shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, param_sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// Bias-correction factors of one optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct AdamFactors {
    bc1: f64,
    bc2: f64,
}

impl AdamState {
    /// Advances the step counter; the returned factors feed `update_slot`.
    pub fn begin_step(&mut self) -> AdamFactors {
        self.step += 1;
        let t = self.step as i32;
        AdamFactors { bc1: 1.0 - self.beta1.powi(t), bc2: 1.0 - self.beta2.powi(t) }
    }

    /// Updates one parameter of the group. A missing gradient is zero (the
    /// moments still decay).
    pub fn update_slot(&mut self, slot: usize, f: AdamFactors, p: &mut Tensor, grad: Option<&[f32]>) {
        let m = &mut self.m[slot];
        let v = &mut self.v[slot];
        assert_eq!(m.len(), p.data.len(), "moment shape must match parameter");
        for j in 0..p.data.len() {
            let g = grad.map_or(0.0, |g| g[j] as f64);
            m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
            v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
            let mhat = m[j] / f.bc1;
            let vhat = v[j] / f.bc2;
            p.data[j] = (p.data[j] as f64 - self.lr * mhat / (vhat.sqrt() + self.eps)) as f32;
        }
    }
}

/// One update over a whole parameter group.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Option<&[f32]>], state: &mut AdamState) {
    assert_eq!(params.len(), state.m.len(), "optimizer built for a different group");
    assert_eq!(params.len(), grads.len());
    let f = state.begin_step();
    for (i, p) in params.iter_mut().enumerate() {
        state.update_slot(i, f, p, grads[i]);
    }
}
