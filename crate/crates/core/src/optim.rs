//! Adaptive-moment optimizer over the trainable arrays of a parameter set.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::real::Real;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` belongs to array `i`; frozen arrays
    /// are never touched whatever their gradient.
    pub fn step<T: Real>(&mut self, params: &mut ModelParams<T>, grads: &[Option<Vec<T>>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Contract("one gradient slot per parameter array is required".into()));
        }
        if self.first.is_empty() {
            self.first = params.arrays().iter().map(|a| vec![0.0; if a.trainable { a.value.numel() } else { 0 }]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(self.beta1, t);
        let c2 = 1.0 - libm::pow(self.beta2, t);
        for (i, a) in params.arrays_mut().iter_mut().enumerate() {
            if !a.trainable {
                continue;
            }
            let Some(grad) = &grads[i] else { continue };
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, w) in a.value.data_mut().iter_mut().enumerate() {
                let gj = grad[j].as_f64();
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let upd = self.lr * (m[j] / c1) / (libm::sqrt(v[j] / c2) + self.eps);
                *w = T::of(w.as_f64() - upd);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = ModelParams::<f64>::new();
        p.push("w", Tensor::from_f64(&[2], &[1.0, 1.0]).unwrap(), true);
        p.push("frozen", Tensor::from_f64(&[1], &[5.0]).unwrap(), false);
        let mut opt = Adam::new(0.1);
        opt.step(&mut p, &[Some(vec![3.0, -0.5]), Some(vec![100.0])]).unwrap();
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] - 1.1).abs() < 1e-6);
        assert_eq!(p.get("frozen").unwrap().data(), &[5.0]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = ModelParams::<f64>::new();
        p.push("x", Tensor::from_f64(&[1], &[3.0]).unwrap(), true);
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            let x = p.get("x").unwrap().data()[0];
            opt.step(&mut p, &[Some(vec![2.0 * (x - 1.0)])]).unwrap();
        }
        assert!((p.get("x").unwrap().data()[0] - 1.0).abs() < 1e-3);
    }
}
