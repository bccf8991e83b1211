use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, MomentState, ParamStore, Tensor};

/// Adaptive-moment optimizer. With `weight_decay > 0` the decay is applied
/// directly to the weights (decoupled form), otherwise this is plain Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, t: 0 }
    }

    pub fn is_decoupled(&self) -> bool {
        self.weight_decay > 0.0
    }

    /// One update of every non-frozen parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let p = store.get_mut(id);
            if p.frozen {
                continue;
            }
            let [r, c] = p.value.shape();
            let state = p.state.get_or_insert_with(|| MomentState { first: Tensor::zeros(r, c), second: Tensor::zeros(r, c) });
            let (m, v) = (state.first.data_mut(), state.second.data_mut());
            let w = p.value.data_mut();
            for i in 0..w.len() {
                let gi = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                if self.weight_decay > 0.0 {
                    w[i] -= self.lr * self.weight_decay * w[i];
                }
                w[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlateauMode {
    /// Larger metric is better.
    Max,
    Min,
}

/// Reduce-on-plateau schedule. An evaluation improves on the best so far
/// when it beats it by more than `threshold`; after more than `patience`
/// consecutive non-improving evaluations the rate is multiplied by
/// `factor` and the count restarts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub mode: PlateauMode,
    pub patience: usize,
    pub factor: f64,
    pub threshold: f64,
    pub best: Option<f64>,
    pub bad: usize,
}

impl Plateau {
    pub fn new(mode: PlateauMode, patience: usize, factor: f64) -> Self {
        Self { mode, patience, factor, threshold: 1e-6, best: None, bad: 0 }
    }

    pub fn improves(&self, metric: f64) -> bool {
        match (self.best, self.mode) {
            (None, _) => true,
            (Some(b), PlateauMode::Max) => metric > b + self.threshold,
            (Some(b), PlateauMode::Min) => metric < b - self.threshold,
        }
    }

    /// Record an evaluation; returns the new learning rate.
    pub fn step(&mut self, metric: f64, lr: f64) -> f64 {
        if self.improves(metric) {
            self.best = Some(metric);
            self.bad = 0;
            return lr;
        }
        self.bad += 1;
        if self.bad > self.patience {
            self.bad = 0;
            lr * self.factor
        } else {
            lr
        }
    }
}
