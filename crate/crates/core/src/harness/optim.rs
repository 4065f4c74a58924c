//! Adaptive-moment optimizer with decoupled weight decay. Moments and the
//! update arithmetic run in f64; parameters stay f32.

use crate::error::{Error, Result};
use crate::harness::config::OptimConfig;
use crate::params::{Gradients, ParamStore};

pub struct AdamW {
    cfg: OptimConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: usize,
}

impl AdamW {
    pub fn new(store: &ParamStore, cfg: OptimConfig) -> Self {
        let (m, v) = store
            .iter()
            .map(|(_, _, t)| (vec![0.0; t.data().len()], vec![0.0; t.data().len()]))
            .unzip();
        AdamW { cfg, m, v, step: 0 }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Current learning rate without advancing the step counter.
    pub fn next_lr(&self) -> f64 {
        self.cfg.lr_at(self.step + 1)
    }

    /// Applies one update; returns the learning rate used.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<f64> {
        if !grads.is_finite() {
            return Err(Error::Divergence {
                step: self.step as u64 + 1,
            });
        }
        self.step += 1;
        let lr = self.cfg.lr_at(self.step);
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bias1 = 1.0 - b1.powi(self.step as i32);
        let bias2 = 1.0 - b2.powi(self.step as i32);
        let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
        for (slot, id) in ids.into_iter().enumerate() {
            let g = match grads.get(id) {
                Some(g) => g.data(),
                None => continue,
            };
            let p = store.get_mut(id).data_mut();
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            for i in 0..p.len() {
                let gi = g[i] as f64;
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mhat = m[i] / bias1;
                let vhat = v[i] / bias2;
                let pi = p[i] as f64;
                let updated =
                    pi - lr * (mhat / (vhat.sqrt() + self.cfg.eps) + self.cfg.weight_decay * pi);
                p[i] = updated as f32;
            }
        }
        Ok(lr)
    }
}
