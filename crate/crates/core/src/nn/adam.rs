//! Adam optimizer.

use crate::scalar::{real, Real};

use super::param::Param;

#[derive(Debug, Clone)]
pub struct Adam<T: Real> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr: real(lr),
            beta1: real(0.9),
            beta2: real(0.999),
            eps: real(1e-8),
            step: 0,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = real(lr);
    }

    /// One update over a parameter group; call once per optimization step
    /// with every param of the group, then zero the grads.
    pub fn step<'a>(&mut self, params: impl Iterator<Item = &'a mut Param<T>>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for p in params {
            for i in 0..p.w.len() {
                let g = p.g[i];
                p.m[i] = self.beta1 * p.m[i] + (T::one() - self.beta1) * g;
                p.v[i] = self.beta2 * p.v[i] + (T::one() - self.beta2) * g * g;
                let m_hat = p.m[i] / bc1;
                let v_hat = p.v[i] / bc2;
                p.w[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
