//! Adam with bias correction, over lists of parameter tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

use super::tensor::Tensor;

/// Adam hyperparameters. Held in `f64` and converted at the update site so
/// one config drives both precisions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 5e-6, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(lr: f64) -> Self {
        AdamConfig { learning_rate: lr, ..Default::default() }
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<R: Real> {
    config: AdamConfig,
    m: Vec<Tensor<R>>,
    v: Vec<Tensor<R>>,
    step: u64,
}

impl<R: Real> AdamState<R> {
    /// Fresh zeroed state shaped like `params`.
    pub fn new(config: AdamConfig, params: &[Tensor<R>]) -> Self {
        AdamState {
            config,
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update: increments the step counter, folds the
    /// gradients into the moment accumulators, and moves the parameters.
    pub fn apply(&mut self, params: &mut [Tensor<R>], grads: &[Tensor<R>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "adam update with {} params / {} grads against state of {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((p, g), (m, v)) in params.iter().zip(grads).zip(self.m.iter().zip(&self.v)) {
            if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != v.shape() {
                return Err(Error::contract(format!(
                    "adam shape mismatch: param {:?} vs grad {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }

        self.step += 1;
        let lr = R::from_f64(self.config.learning_rate);
        let b1 = R::from_f64(self.config.beta1);
        let b2 = R::from_f64(self.config.beta2);
        let eps = R::from_f64(self.config.epsilon);
        let bc1 = R::one() - R::from_f64(self.config.beta1.powi(self.step as i32));
        let bc2 = R::one() - R::from_f64(self.config.beta2.powi(self.step as i32));

        for ((p, g), (m, v)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = b1 * md[i] + (R::one() - b1) * gi;
                vd[i] = b2 * vd[i] + (R::one() - b2) * gi * gi;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] = pd[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
