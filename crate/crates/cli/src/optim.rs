//! Adam with L2 weight decay, and the polynomial learning-rate schedule.
//!
//! Decay is coupled: `wd * theta` is added to the gradient before the moment
//! updates, as in the classic `Adam(weight_decay=..)` formulation.

use denseformer::{Gradients, ParamStore, Real};

use crate::config::OptimizerConfig;
use crate::error::{HarnessError, Result};

/// `lr0 * (1 - epoch / max_epochs)^power` for `0 <= epoch < max_epochs`.
pub fn poly_lr_with_power(epoch: usize, max_epochs: usize, lr0: f64, power: f64) -> Result<f64> {
    if epoch >= max_epochs {
        return Err(HarnessError::Config(format!("epoch {epoch} is outside 0..{max_epochs}")));
    }
    Ok(lr0 * (1.0 - epoch as f64 / max_epochs as f64).powf(power))
}

pub fn poly_lr(epoch: usize, max_epochs: usize, lr0: f64) -> Result<f64> {
    poly_lr_with_power(epoch, max_epochs, lr0, 0.9)
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &OptimizerConfig) -> Self {
        Adam {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter in `store`. Parameters that received no
    /// gradient are treated as having a zero loss gradient.
    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) {
        if self.m.is_empty() {
            self.m = store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let grad = grads.param(id).map(|g| g.data().to_vec());
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let theta = store.get_mut(id).make_mut();
            for k in 0..theta.len() {
                let w = theta[k].as_f64();
                let g = grad.as_ref().map_or(0.0, |g| g[k].as_f64()) + self.weight_decay * w;
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let update = lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
                theta[k] = T::of(w - update);
            }
        }
    }
}
