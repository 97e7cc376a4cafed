//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Moment buffers and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    /// Zeroed moments shaped like every parameter in `store`.
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let sizes: Vec<usize> = store.params().iter().map(|p| crate::tensor::numel(&p.shape)).collect();
        AdamW {
            lr,
            weight_decay,
            betas: (BETA1, BETA2),
            eps: EPS,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One update; `grads[i]` belongs to the i-th parameter of `store`.
    /// Decay is applied to the parameter before the Adam update.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor<f32>]) -> Result<()> {
        if grads.len() != self.m.len() || store.len() != self.m.len() {
            return Err(Error::dim(format!(
                "optimizer tracks {} parameters, got {} grads for {} parameters",
                self.m.len(),
                grads.len(),
                store.len()
            )));
        }
        for (id, g) in store.ids().zip(grads) {
            if g.numel() != self.m[id.index()].len() || g.shape() != store.params()[id.index()].shape.as_slice() {
                return Err(Error::dim(format!("gradient {:?} does not match parameter '{}'", g.shape(), store.name(id))));
            }
        }
        self.step += 1;
        let (b1, b2) = self.betas;
        let t = self.step as i32;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let decay = 1.0 - self.lr * self.weight_decay;
        let ids: Vec<_> = store.ids().collect();
        for (id, g) in ids.into_iter().zip(grads) {
            let i = id.index();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.get_mut(id).data_mut();
            for (j, (pj, gj)) in p.iter_mut().zip(g.data()).enumerate() {
                let gj = *gj as f64;
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                let x = *pj as f64 * decay;
                *pj = (x - self.lr * mhat / (vhat.sqrt() + self.eps)) as f32;
            }
        }
        Ok(())
    }
}
