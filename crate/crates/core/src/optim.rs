//! Adam with bias-corrected moment estimates.

use crate::nn::NetParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: NetParams<T>,
    pub v: NetParams<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &NetParams<T>) -> Self {
        Adam {
            config,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// Applies one update to every trainable tensor of `params`.
    pub fn step(&mut self, params: &mut NetParams<T>, grads: &NetParams<T>) {
        debug_assert!(params.same_layout(grads));
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = 1.0 - c.beta1.powf(self.t as f64);
        let bc2 = 1.0 - c.beta2.powf(self.t as f64);
        let step = T::lit(c.learning_rate / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(c.eps);
        let one = T::one();
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            if !p.trainable {
                continue;
            }
            for (((pv, &gv), mv), vv) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                *pv -= step * *mv / ((*vv * inv_bc2).sqrt() + eps);
            }
        }
    }

    pub fn moments_finite(&self) -> bool {
        self.m.all_finite() && self.v.all_finite()
    }
}
