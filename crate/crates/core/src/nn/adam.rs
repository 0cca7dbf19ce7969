use serde::{Deserialize, Serialize};

use super::{Params, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Adam with bias-corrected moments, one accumulator pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<M: Params<T>>(config: AdamConfig, model: &M) -> Self {
        let shapes: Vec<Vec<usize>> = model.tensors().iter().map(|t| t.shape().to_vec()).collect();
        Self::for_shapes(config, &shapes)
    }

    pub fn for_shapes(config: AdamConfig, shapes: &[Vec<usize>]) -> Self {
        Self {
            config,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// Applies one update to every parameter of `model` using the matching tensor of `grads`.
    pub fn step<M: Params<T>>(&mut self, model: &mut M, grads: &M) -> Result<()> {
        let g = grads.tensors();
        if g.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, gradients have {}",
                self.m.len(),
                g.len()
            )));
        }
        for (idx, grad) in g.iter().enumerate() {
            if grad.shape() != self.m[idx].shape() {
                return Err(Error::Shape(format!(
                    "gradient {idx} has shape {:?}, moment has {:?}",
                    grad.shape(),
                    self.m[idx].shape()
                )));
            }
        }
        self.step += 1;
        let (c1, c2) = self.corrections();
        let mut idx = 0;
        let mut mismatch = None;
        model.visit_params_mut(&mut |name, p| {
            if p.shape() != g[idx].shape() {
                mismatch.get_or_insert_with(|| name.to_string());
            } else {
                update(&self.config, c1, c2, p.data_mut(), g[idx].data(), self.m[idx].data_mut(), self.v[idx].data_mut());
            }
            idx += 1;
        });
        match mismatch {
            Some(name) => Err(Error::Shape(format!("parameter {name} does not match its gradient"))),
            None => Ok(()),
        }
    }

    /// Update for a single flat parameter slice tracked in accumulator `slot`.
    pub fn step_slice(&mut self, params: &mut [T], grads: &[T], slot: usize) -> Result<()> {
        if params.len() != grads.len() || self.m.get(slot).map(|m| m.len()) != Some(params.len()) {
            return Err(Error::Shape(format!(
                "adam slice: {} params, {} grads",
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let (c1, c2) = self.corrections();
        update(&self.config, c1, c2, params, grads, self.m[slot].data_mut(), self.v[slot].data_mut());
        Ok(())
    }

    fn corrections(&self) -> (f64, f64) {
        let t = self.step as i32;
        (1.0 - self.config.beta1.powi(t), 1.0 - self.config.beta2.powi(t))
    }
}

fn update<T: Scalar>(cfg: &AdamConfig, c1: f64, c2: f64, p: &mut [T], g: &[T], m: &mut [T], v: &mut [T]) {
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one = T::ONE;
    let lr = T::from_f64(cfg.lr);
    let eps = T::from_f64(cfg.eps);
    let inv_c1 = T::from_f64(1.0 / c1);
    let inv_c2 = T::from_f64(1.0 / c2);
    for k in 0..p.len() {
        m[k] = b1 * m[k] + (one - b1) * g[k];
        v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
        let m_hat = m[k] * inv_c1;
        let v_hat = v[k] * inv_c2;
        p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
