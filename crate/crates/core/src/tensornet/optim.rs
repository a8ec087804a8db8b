use serde::{Deserialize, Serialize};

use super::params::ParameterStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimKind {
    Adam,
    AdamW,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimHyper {
    pub kind: OptimKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty for `Adam`, decoupled decay for `AdamW`.
    pub weight_decay: f64,
}

impl OptimHyper {
    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimKind::AdamW,
            weight_decay,
            ..Self::adam(lr)
        }
    }
}

/// One Adam/AdamW step over every trainable block using the accumulated
/// gradient buffers. Increments `store.step`.
pub fn adam_step(store: &mut ParameterStore, h: &OptimHyper) {
    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    for block in store.blocks_mut().iter_mut().filter(|b| b.trainable) {
        let p = std::sync::Arc::make_mut(&mut block.value);
        let (m, v, g) = (block.m.data_mut(), block.v.data_mut(), block.grad.data());
        for i in 0..g.len() {
            let mut gi = g[i];
            let pi = &mut p.data_mut()[i];
            match h.kind {
                OptimKind::Adam => gi += h.weight_decay * *pi,
                OptimKind::AdamW => *pi *= 1.0 - h.lr * h.weight_decay,
            }
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
            let denom = (v[i] / bc2).sqrt() + h.eps;
            *pi -= h.lr * (m[i] / bc1) / denom;
        }
    }
}
