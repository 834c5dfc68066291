//! Decoupled-weight-decay Adam over a list of tensors.
//!
//! The optimizer holds first/second moment buffers shaped like the tensors
//! it was created for and is fed matching parameter/gradient lists each
//! step. Continuation-token training instantiates it over a single
//! embedding row; pretraining instantiates it over every tensor.

use alloc::vec;
use alloc::vec::Vec;

use crate::Real;

#[derive(Debug, Clone)]
pub struct AdamW<R> {
    m: Vec<Vec<R>>,
    v: Vec<Vec<R>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl<R: Real> AdamW<R> {
    pub fn new(shapes: &[usize]) -> Self {
        AdamW {
            m: shapes.iter().map(|&n| vec![R::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![R::zero(); n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update. `params[i]` and `grads[i]` must match the shape
    /// the optimizer was created with.
    pub fn step(&mut self, params: &mut [&mut Vec<R>], grads: &[&Vec<R>], lr: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let b1 = R::from_f64(self.beta1);
        let b2 = R::from_f64(self.beta2);
        let one_m_b1 = R::from_f64(1.0 - self.beta1);
        let one_m_b2 = R::from_f64(1.0 - self.beta2);
        let bc1 = R::from_f64(1.0 - libm::pow(self.beta1, self.t as f64));
        let bc2 = R::from_f64(1.0 - libm::pow(self.beta2, self.t as f64));
        let lr_r = R::from_f64(lr);
        let eps = R::from_f64(self.eps);
        let wd = R::from_f64(self.weight_decay);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            debug_assert_eq!(p.len(), g.len());
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + one_m_b1 * gi;
                v[i] = b2 * v[i] + one_m_b2 * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] = p[i] - lr_r * (mhat / (vhat.sqrt() + eps) + wd * p[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut opt = AdamW::<f64>::new(&[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.3, 0.1, -0.7];
        let before = p.clone();
        opt.step(&mut [&mut p], &[&g], 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn descends_a_quadratic() {
        // Minimize 0.5 * x^2; gradient is x.
        let mut opt = AdamW::<f64>::new(&[1]);
        let mut p = vec![5.0];
        for _ in 0..2000 {
            let g = vec![p[0]];
            opt.step(&mut [&mut p], &[&g], 0.01);
        }
        assert!(p[0].abs() < 1e-2, "ended at {}", p[0]);
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let mut opt = AdamW::<f64>::new(&[1]);
        opt.weight_decay = 0.1;
        let mut p = vec![2.0];
        let g = vec![0.0];
        opt.step(&mut [&mut p], &[&g], 0.05);
        assert!((p[0] - (2.0 - 0.05 * 0.1 * 2.0)).abs() < 1e-12);
    }
}
