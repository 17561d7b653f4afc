use brainmark_core::Scalar;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        Self { lr, beta1: BETA1, beta2: BETA2, eps: EPS, step: 0, m: zeros(), v: zeros() }
    }

    pub fn update(&mut self, params: &mut [Tensor<T>], grads: &[Vec<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::ShapeMismatch("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if g.len() != p.len() {
                return Err(Error::ShapeMismatch("gradient length differs from parameter".into()));
            }
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi.f64();
                let m1 = self.beta1 * mi.f64() + (1.0 - self.beta1) * gi;
                let v1 = self.beta2 * vi.f64() + (1.0 - self.beta2) * gi * gi;
                *mi = T::of(m1);
                *vi = T::of(v1);
                let delta = self.lr * (m1 / c1) / ((v1 / c2).sqrt() + self.eps);
                *x = T::of(x.f64() - delta);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = vec![Tensor::new(vec![3], vec![1.0f64, 1.0, 1.0]).unwrap()];
        let mut opt = Adam::new(0.1, &p);
        opt.update(&mut p, &[vec![2.0, -0.5, 0.0]]).unwrap();
        let d = p[0].data();
        assert!((d[0] - 0.9).abs() < 1e-6);
        assert!((d[1] - 1.1).abs() < 1e-6);
        assert_eq!(d[2], 1.0);
    }

    #[test]
    fn zero_learning_rate_is_bitwise_noop() {
        let init = Tensor::new(vec![4], vec![0.3f32, -1.7, 2.5e-8, 9.0]).unwrap();
        let mut p = vec![init.clone()];
        let mut opt = Adam::new(0.0, &p);
        for _ in 0..5 {
            opt.update(&mut p, &[vec![1.0, -2.0, 3.0, 0.5]]).unwrap();
        }
        assert_eq!(p[0], init);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![Tensor::new(vec![2], vec![3.0f64, -2.0]).unwrap()];
        let mut opt = Adam::new(0.05, &p);
        for _ in 0..2000 {
            let g: Vec<f64> = p[0].data().iter().map(|x| 2.0 * x).collect();
            opt.update(&mut p, &[g]).unwrap();
        }
        assert!(p[0].data().iter().all(|x| x.abs() < 1e-2));
    }
}
