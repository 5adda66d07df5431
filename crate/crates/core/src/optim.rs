//! Adam with bias correction.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Adam hyperparameters. The moment defaults are the usual
/// `beta1 = 0.9`, `beta2 = 0.999`, `epsilon = 1e-8`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamParams {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamParams {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    m: Vec<f32>,
    v: Vec<f32>,
    step: i32,
}

impl Adam {
    pub fn new(params: AdamParams, len: usize) -> Self {
        Adam {
            params,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// One descent step on `theta` given its gradient.
    pub fn step(&mut self, theta: &mut [f32], grad: &[f32]) {
        assert_eq!(theta.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let p = self.params;
        let (b1, b2) = (p.beta1 as f32, p.beta2 as f32);
        let c1 = 1.0 - libm::pow(p.beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(p.beta2, self.step as f64);
        let lr = (p.learning_rate / c1) as f32;
        let inv_c2 = (1.0 / c2) as f32;
        let eps = p.epsilon as f32;
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            theta[i] -= lr * self.m[i] / (libm::sqrtf(self.v[i] * inv_c2) + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(AdamParams::with_learning_rate(0.1), 2);
        let mut theta = [1.0f32, -1.0];
        adam.step(&mut theta, &[3.0, -0.5]);
        assert!((theta[0] - 0.9).abs() < 1e-6);
        assert!((theta[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = Adam::new(AdamParams::with_learning_rate(0.05), 1);
        let mut x = [5.0f32];
        for _ in 0..2000 {
            let g = [2.0 * (x[0] - 1.5)];
            adam.step(&mut x, &g);
        }
        assert!((x[0] - 1.5).abs() < 1e-2);
    }
}
