//! Supervised next-token pretraining.

use alloc::vec;
use alloc::vec::Vec;

use super::{AdamW, BackwardMode, Model, Parameters};
use crate::vocab::TokenId;
use crate::{Error, Real, Result};

impl<R: Real> Model<R> {
    /// One AdamW step of next-token cross-entropy over `batch`, updating
    /// every parameter. Returns the mean loss per predicted token.
    ///
    /// The loss normalizer follows the model's continuation rule: a
    /// designated continuation token is excluded from each softmax unless
    /// `continue_in_normalizer` is set.
    pub fn pretrain_step(
        &mut self,
        batch: &[Vec<TokenId>],
        lr: f64,
        opt: &mut AdamW<R>,
    ) -> Result<R> {
        let total: usize = batch.iter().map(|s| s.len().saturating_sub(1)).sum();
        if total == 0 {
            return Err(Error::InvalidConfig("batch holds no predictable tokens"));
        }
        let mut grads = Parameters::<R>::zeros(&self.config);
        let inv_total = 1.0 / total as f64;
        let mut loss = 0.0f64;
        for seq in batch {
            if seq.len() < 2 {
                continue;
            }
            let (logits, stash) = self.forward_train(seq)?;
            // Maximizing mean log-probability: each predicted position
            // carries weight -1/total in the loss, so the gradient of the
            // loss is the negated weighted log-probability gradient.
            let weights = {
                let mut w = vec![R::zero(); seq.len()];
                for x in w.iter_mut().skip(1) {
                    *x = R::from_f64(-inv_total);
                }
                w
            };
            let dlogits = self.weighted_logprob_dlogits(&logits, seq, &weights, R::one());
            let v = self.config.vocab_size;
            for t in 1..seq.len() {
                let row = &logits[(t - 1) * v..t * v];
                loss -= self.row_logprob_internal(row, seq[t], R::one()).to_f64();
            }
            self.backward(seq, &stash, &dlogits, BackwardMode::Full(&mut grads))?;
        }
        loss *= inv_total;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        let grad_list = grads.tensors();
        let mut param_list = self.params.tensors_mut();
        opt.step(&mut param_list, &grad_list, lr);
        Ok(R::from_f64(loss))
    }

    /// Optimizer sized for every tensor of this model.
    pub fn full_optimizer(&self) -> AdamW<R> {
        let shapes: Vec<usize> = self.params.tensors().iter().map(|t| t.len()).collect();
        AdamW::new(&shapes)
    }

    /// Mean next-token cross-entropy of `batch` without updating anything.
    pub fn eval_loss(&self, batch: &[Vec<TokenId>]) -> Result<R> {
        let total: usize = batch.iter().map(|s| s.len().saturating_sub(1)).sum();
        if total == 0 {
            return Err(Error::InvalidConfig("batch holds no predictable tokens"));
        }
        let v = self.config.vocab_size;
        let mut loss = 0.0f64;
        for seq in batch {
            if seq.len() < 2 {
                continue;
            }
            let logits = self.forward(seq)?;
            for t in 1..seq.len() {
                let row = &logits[(t - 1) * v..t * v];
                loss -= self.row_logprob_internal(row, seq[t], R::one()).to_f64();
            }
        }
        let loss = loss / total as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        Ok(R::from_f64(loss))
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_config;
    use super::*;
    use crate::rng::SamplerState;

    fn toy_batch() -> Vec<Vec<TokenId>> {
        vec![
            vec![0, 3, 1, 4, 1, 5, 2],
            vec![0, 2, 7, 1, 8, 2, 8],
            vec![0, 6, 5, 3, 5, 8, 0],
        ]
    }

    #[test]
    fn loss_at_near_zero_init_is_close_to_uniform() {
        let cfg = tiny_config(9);
        // Tiny weights: logits near zero, so the loss starts near ln(V).
        let mut m = Model::<f32>::init(cfg, &mut SamplerState::new(1, 0).rng()).unwrap();
        for tensor in m.params.tensors_mut() {
            for x in tensor.iter_mut() {
                *x *= 0.01;
            }
        }
        let loss = m.eval_loss(&toy_batch()).unwrap();
        let uniform = (9.0f32).ln();
        assert!(
            (loss - uniform).abs() / uniform < 0.05,
            "loss {loss} vs ln(9) {uniform}"
        );
    }

    #[test]
    fn overfitting_one_batch_strictly_decreases_loss() {
        let cfg = tiny_config(9);
        let mut m = Model::<f32>::init(cfg, &mut SamplerState::new(2, 0).rng()).unwrap();
        let mut opt = m.full_optimizer();
        let batch = toy_batch();
        let mut last = f32::INFINITY;
        for step in 0..50 {
            let loss = m.pretrain_step(&batch, 1e-3, &mut opt).unwrap();
            assert!(loss < last, "loss rose at step {step}: {loss} vs {last}");
            last = loss;
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let cfg = tiny_config(9);
        let mut m = Model::<f32>::init(cfg, &mut SamplerState::new(3, 0).rng()).unwrap();
        let before = m.params.clone();
        let mut opt = m.full_optimizer();
        m.pretrain_step(&toy_batch(), 0.0, &mut opt).unwrap();
        assert_eq!(m.params, before);
    }
}
