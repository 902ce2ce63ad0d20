use serde::{Deserialize, Serialize};

use super::layers::Param;
use super::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step(&mut self, params: Vec<&mut Param<T>>) {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        assert_eq!(self.first.len(), params.len(), "optimizer/parameter count mismatch");
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let step_size = T::from_f64(c.learning_rate / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);
        let eps = T::from_f64(c.eps);
        let one = T::one();
        for ((p, m), v) in params.into_iter().zip(&mut self.first).zip(&mut self.second) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                p.value[i] -= step_size * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
                p.grad[i] = T::zero();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::<f64>::new(vec![2], vec![3.0, -2.0]);
        let mut opt = Adam::new(AdamConfig {
            learning_rate: 0.05,
            beta1: 0.9,
            ..AdamConfig::default()
        });
        for _ in 0..2000 {
            for i in 0..2 {
                p.grad[i] = 2.0 * (p.value[i] - 1.0);
            }
            opt.step(vec![&mut p]);
        }
        assert!(p.value.iter().all(|v| (v - 1.0).abs() < 1e-3), "{:?}", p.value);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Param::<f64>::new(vec![1], vec![0.0]);
        p.grad[0] = 10.0;
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(vec![&mut p]);
        assert!((p.value[0] + 2e-4).abs() < 1e-9);
        assert_eq!(p.grad[0], 0.0);
    }
}
