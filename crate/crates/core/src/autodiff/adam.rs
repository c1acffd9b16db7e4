use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{shape_err, Result};

/// Bias-corrected Adam. Moments are stored in the parameter set's order.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update; `grads` must follow the order of `params`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(shape_err("adam_step tensors", params.len(), grads.len()));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, ((name, p), g)) in params.iter_mut().zip(grads).enumerate() {
            if p.len() != g.len() || self.m[i].len() != p.len() {
                return Err(shape_err(format!("adam_step `{name}`"), p.len(), g.len()));
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, (pj, gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *pj -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
