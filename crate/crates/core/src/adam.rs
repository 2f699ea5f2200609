//! Adam with bias-corrected moment estimates.

use alloc::vec::Vec;

use crate::error::{invariant_err, Result};
use crate::math;
use crate::net::ParamStore;
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments, one pair per parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    cfg: AdamConfig,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
    step: u64,
    beta1_pow: f64,
    beta2_pow: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros = |p: &crate::net::Param| Tensor2::zeros(p.value.rows(), p.value.cols());
        Self {
            cfg,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            step: 0,
            beta1_pow: 1.0,
            beta2_pow: 1.0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &Tensor2 {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &Tensor2 {
        &self.v[index]
    }

    /// Applies one update using the gradients currently stored in `params`.
    pub fn update(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(invariant_err!("optimizer tracks {} tensors, store has {}", self.m.len(), params.len()));
        }
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        self.step += 1;
        self.beta1_pow *= beta1;
        self.beta2_pow *= beta2;
        let c1 = 1.0 - self.beta1_pow;
        let c2 = 1.0 - self.beta2_pow;
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if m.shape() != p.value.shape() {
                return Err(invariant_err!("moment shape mismatch for {}", p.name));
            }
            let g = p.grad.data();
            let w = p.value.data_mut();
            for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *w -= lr * mhat / (math::sqrt(vhat) + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor2::from_rows(&[[1.0, -2.0, 0.5]])).unwrap();
        p.param_mut(0).grad = Tensor2::from_rows(&[[0.3, -4.0, 0.0]]);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        adam.update(&mut p, 0.01).unwrap();
        let w = p.param(0).value.data();
        assert!((w[0] - 0.99).abs() < 1e-7);
        assert!((w[1] + 1.99).abs() < 1e-7);
        assert_eq!(w[2], 0.5);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_lr_keeps_params() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor2::from_rows(&[[1.0, 2.0]])).unwrap();
        p.param_mut(0).grad = Tensor2::from_rows(&[[5.0, -5.0]]);
        let before = p.clone();
        let mut adam = AdamState::new(&p, AdamConfig::default());
        adam.update(&mut p, 0.0).unwrap();
        assert_eq!(p.param(0).value, before.param(0).value);
    }
}
