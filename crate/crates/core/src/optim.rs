//! Momentum SGD and Adam over a [`ParamStore`], cosine schedule, clipping.

use std::f64::consts::PI;

use crate::config::{OptimizerKind, RunConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub momentum: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Optimizer {
    pub fn new(cfg: &RunConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        let v = if cfg.optimizer == OptimizerKind::Adam { zeros.clone() } else { Vec::new() };
        Optimizer { kind: cfg.optimizer, momentum: cfg.momentum, beta2: cfg.beta2, weight_decay: cfg.weight_decay, m: zeros, v, t: 0 }
    }

    /// One update with learning rate `lr`; `grads` are in store order.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) {
        self.t += 1;
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = store.get_mut(id).data_mut();
            let g = grads[k].data();
            let m = &mut self.m[k];
            match self.kind {
                OptimizerKind::Sgd => {
                    for i in 0..p.len() {
                        let gi = g[i] + self.weight_decay * p[i];
                        m[i] = self.momentum * m[i] + gi;
                        p[i] -= lr * m[i];
                    }
                }
                OptimizerKind::Adam => {
                    let v = &mut self.v[k];
                    let b1 = self.momentum;
                    let c1 = 1.0 - b1.powi(self.t as i32);
                    let c2 = 1.0 - self.beta2.powi(self.t as i32);
                    for i in 0..p.len() {
                        let gi = g[i] + self.weight_decay * p[i];
                        m[i] = b1 * m[i] + (1.0 - b1) * gi;
                        v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

/// Linear warmup, then cosine decay from `base` to 0 over the remaining steps.
pub fn cosine_lr(base: f64, step: usize, total: usize, warmup: usize) -> f64 {
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let x = (step - warmup) as f64 / span as f64;
    0.5 * base * (1.0 + (PI * x.min(1.0)).cos())
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`
/// (no-op when `max_norm` is 0). Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|x| *x *= k);
        }
    }
    norm
}
