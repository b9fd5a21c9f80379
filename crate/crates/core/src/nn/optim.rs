//! SGD with Nesterov momentum and continuous exponential learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::network::Regularization;
use super::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub velocity: Vec<Tensor>,
    pub base_lr: f64,
    pub momentum: f64,
    pub decay_rate: f64,
    pub decay_steps: f64,
    pub step: u64,
    pub l2_weight: f64,
    pub l1_weight: f64,
}

impl OptimizerState {
    /// Zero velocities shaped like `params`, with the default schedule
    /// (lr 1e-3, momentum 0.9, ×0.9 per 1000 steps, L2 1e-5, L1 1e-6).
    pub fn for_params(params: &[Tensor]) -> Self {
        OptimizerState {
            velocity: params.iter().map(Tensor::zeros_like).collect(),
            base_lr: 1e-3,
            momentum: 0.9,
            decay_rate: 0.9,
            decay_steps: 1000.0,
            step: 0,
            l2_weight: 1e-5,
            l1_weight: 1e-6,
        }
    }

    /// `base_lr · decay_rate^(step / decay_steps)`
    pub fn learning_rate(&self) -> f64 {
        self.lr_at(self.step)
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        self.base_lr * self.decay_rate.powf(step as f64 / self.decay_steps)
    }

    pub fn regularization(&self) -> Regularization {
        Regularization {
            l2: self.l2_weight,
            l1: self.l1_weight,
        }
    }

    /// One Nesterov update over `params` (in the order the velocities were
    /// created): `v ← μv − lr·g`, `θ ← θ + μv − lr·g`.
    pub fn step<'a, I>(&mut self, params: I, grads: &[Tensor]) -> Result<()>
    where
        I: IntoIterator<Item = &'a mut Tensor>,
    {
        let params: Vec<&mut Tensor> = params.into_iter().collect();
        if params.len() != grads.len() || params.len() != self.velocity.len() {
            return Err(Error::contract(format!(
                "optimizer holds {} velocities, got {} parameters and {} gradients",
                self.velocity.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), v) in params.iter().zip(grads).zip(&self.velocity) {
            if p.shape != g.shape || p.shape != v.shape {
                return Err(Error::contract(format!("gradient shape mismatch for `{}`", p.name)));
            }
            if !g.is_finite() {
                return Err(Error::Divergence { layer: p.name.clone() });
            }
        }
        let lr = self.learning_rate();
        let mu = self.momentum;
        for ((p, g), v) in params.into_iter().zip(grads).zip(self.velocity.iter_mut()) {
            for ((theta, &grad), vel) in p.data.iter_mut().zip(&g.data).zip(v.data.iter_mut()) {
                *vel = mu * *vel - lr * grad;
                *theta += mu * *vel - lr * grad;
            }
        }
        self.step += 1;
        Ok(())
    }
}
