use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Consecutive skipped steps after which training aborts.
pub const MAX_BAD_STEPS: u32 = 3;

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    #[serde(default)]
    pub bad_steps: u32,
}

impl AdamW {
    pub fn new(params: &[Tensor], lr: f64, weight_decay: f64) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(weight_decay.is_finite() && weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay must be non-negative, got {weight_decay}")));
        }
        let zeros = || params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
            bad_steps: 0,
        })
    }

    fn check_shapes(&self, params: &[Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "optimizer holds {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != m.shape() || g.shape() != m.shape() {
                return Err(Error::Dimension(format!(
                    "parameter {:?} / gradient {:?} vs moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
        }
        Ok(())
    }

    /// One update. A non-finite gradient skips the step and returns
    /// `Ok(false)`; the third consecutive skip is an error.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<bool> {
        self.check_shapes(params, grads)?;
        if grads.iter().any(|g| !g.is_finite()) {
            self.bad_steps += 1;
            log::warn!("skipping optimizer step {}: non-finite gradient", self.step + 1);
            if self.bad_steps >= MAX_BAD_STEPS {
                return Err(Error::NonFinite(format!(
                    "{} consecutive non-finite gradients",
                    self.bad_steps
                )));
            }
            return Ok(false);
        }
        self.bad_steps = 0;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - self.lr * self.weight_decay;
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((w, &gi), (mi, vi)) in iter {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w = *w * decay - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(true)
    }
}
