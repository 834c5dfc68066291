//! Reverse-mode differentiation through the stashed forward pass.
//!
//! Two consumers share this code: pretraining needs gradients for every
//! tensor, while continuation-token training needs only the gradient of a
//! single embedding row. The activation chain is identical; the mode
//! decides which weight gradients get accumulated.
//!
//! With the continuation token excluded from log-probability normalizers
//! (the default), its row receives gradient only through the input path:
//! positions where the token itself sits in the prefix. With
//! `continue_in_normalizer` set, the tied output projection contributes a
//! second path through the softmax denominator.

use alloc::vec;
use alloc::vec::Vec;

use super::forward::{gelu_grad, ForwardStash};
use super::linalg::{axpy, colsum_acc, dot, mm_nn, mm_nt, mm_tn};
use super::{Model, Parameters};
use crate::vocab::TokenId;
use crate::{Error, Real, Result};

/// What the backward pass should accumulate.
pub enum BackwardMode<'a, R> {
    /// Gradients for every tensor, written into a mirror parameter set.
    Full(&'a mut Parameters<R>),
    /// Gradient of one embedding row only.
    RowOnly { row: TokenId, acc: &'a mut [R] },
}

impl<R: Real> Model<R> {
    /// Per-token log-probabilities of the realized tokens at the masked
    /// positions. Position `t` is scored from the logit row at `t - 1`
    /// after dividing logits by `temperature`; the mask may not select
    /// position 0.
    pub fn sequence_logprobs(
        &self,
        tokens: &[TokenId],
        mask: &[bool],
        temperature: R,
    ) -> Result<Vec<Option<R>>> {
        if mask.len() != tokens.len() || mask.first().copied().unwrap_or(false) {
            return Err(Error::InvalidConfig(
                "mask must align with tokens and skip position 0",
            ));
        }
        let logits = self.forward(tokens)?;
        let v = self.config.vocab_size;
        let mut out = vec![None; tokens.len()];
        for t in 1..tokens.len() {
            if mask[t] {
                let row = &logits[(t - 1) * v..t * v];
                out[t] = Some(self.row_logprob_internal(row, tokens[t], temperature));
            }
        }
        Ok(out)
    }

    /// Exact gradient of `sum_t weights[t] * logprob(tokens[t])` with
    /// respect to the continuation embedding row. `weights[0]` must be
    /// zero; positions with zero weight contribute nothing.
    pub fn grad_wrt_row(
        &self,
        tokens: &[TokenId],
        weights: &[R],
        temperature: R,
    ) -> Result<Vec<R>> {
        let row = self
            .config
            .continuation
            .ok_or(Error::InvalidConfig("no continuation row designated"))?;
        if weights.len() != tokens.len() || weights.first().is_some_and(|&w| w != R::zero()) {
            return Err(Error::InvalidConfig(
                "weights must align with tokens and skip position 0",
            ));
        }
        let (logits, stash) = self.forward_train(tokens)?;
        let dlogits = self.weighted_logprob_dlogits(&logits, tokens, weights, temperature);
        let mut acc = vec![R::zero(); self.config.d_model];
        self.backward(tokens, &stash, &dlogits, BackwardMode::RowOnly { row, acc: &mut acc })?;
        Ok(acc)
    }

    /// Log-probability of `token` on one logit row, honoring the
    /// continuation-token normalizer rule.
    pub(super) fn row_logprob_internal(&self, row: &[R], token: TokenId, temperature: R) -> R {
        super::sample::row_logprob(
            row,
            temperature,
            token,
            self.excluded_from_normalizer(),
        )
    }

    pub(super) fn excluded_from_normalizer(&self) -> Option<TokenId> {
        match self.config.continuation {
            Some(c) if !self.config.continue_in_normalizer => Some(c),
            _ => None,
        }
    }

    /// Builds `d(objective)/d(logits)` for the weighted-log-probability
    /// objective: at each weighted position `t`, the logit row `t - 1`
    /// receives `(w/temperature) * (onehot - softmax)` over the tokens in
    /// the normalizer.
    pub(super) fn weighted_logprob_dlogits(
        &self,
        logits: &[R],
        tokens: &[TokenId],
        weights: &[R],
        temperature: R,
    ) -> Vec<R> {
        let v = self.config.vocab_size;
        let excluded = self.excluded_from_normalizer();
        let inv_t = R::one() / temperature;
        let mut dlogits = vec![R::zero(); logits.len()];
        for t in 1..tokens.len() {
            let w = weights[t];
            if w == R::zero() {
                continue;
            }
            let row = &logits[(t - 1) * v..t * v];
            let drow = &mut dlogits[(t - 1) * v..t * v];
            let mut max = R::neg_infinity();
            for (j, &l) in row.iter().enumerate() {
                if excluded == Some(j as TokenId) {
                    continue;
                }
                let s = l * inv_t;
                if s > max {
                    max = s;
                }
            }
            let mut sum = R::zero();
            for (j, &l) in row.iter().enumerate() {
                if excluded == Some(j as TokenId) {
                    continue;
                }
                sum = sum + (l * inv_t - max).exp();
            }
            let inv_sum = R::one() / sum;
            let scale = w * inv_t;
            for (j, &l) in row.iter().enumerate() {
                let target = if j as TokenId == tokens[t] { R::one() } else { R::zero() };
                if excluded == Some(j as TokenId) {
                    // Scoring the excluded token still reads its logit,
                    // so the one-hot survives even though the softmax
                    // part does not.
                    drow[j] = drow[j] + scale * target;
                    continue;
                }
                let p = (l * inv_t - max).exp() * inv_sum;
                drow[j] = drow[j] + scale * (target - p);
            }
        }
        dlogits
    }

    /// Backpropagates `dlogits` through the stashed activations.
    pub fn backward(
        &self,
        tokens: &[TokenId],
        stash: &ForwardStash<R>,
        dlogits: &[R],
        mode: BackwardMode<'_, R>,
    ) -> Result<()> {
        let cfg = &self.config;
        let d = cfg.d_model;
        let t = stash.t;
        let v = cfg.vocab_size;
        debug_assert_eq!(dlogits.len(), t * v);
        let (mut grads, mut row_acc) = match mode {
            BackwardMode::Full(g) => (Some(g), None),
            BackwardMode::RowOnly { row, acc } => (None, Some((row, acc))),
        };

        // Tied output projection: logits = h @ tok_emb^T.
        let mut dh = vec![R::zero(); t * d];
        mm_nn(&mut dh, dlogits, &self.params.tok_emb, t, v, d, false);
        if let Some(g) = grads.as_deref_mut() {
            mm_tn(&mut g.tok_emb, dlogits, &stash.h, v, t, d, true);
        }
        if let Some((row, acc)) = row_acc.as_mut() {
            let r = *row as usize;
            for i in 0..t {
                let w = dlogits[i * v + r];
                if w != R::zero() {
                    axpy(acc, w, &stash.h[i * d..(i + 1) * d]);
                }
            }
        }

        // Final layer norm.
        let mut dx = vec![R::zero(); t * d];
        {
            let (dg, db) = match grads.as_deref_mut() {
                Some(g) => (Some(&mut g.ln_f_g), Some(&mut g.ln_f_b)),
                None => (None, None),
            };
            layer_norm_backward(
                &stash.x_final,
                &self.params.ln_f_g,
                &stash.ln_f_mean,
                &stash.ln_f_rstd,
                &dh,
                &mut dx,
                dg,
                db,
                d,
            );
        }

        let dh_dim = cfg.head_dim();
        let scale = R::from_f64(1.0 / libm::sqrt(dh_dim as f64));
        for (l, layer) in self.params.layers.iter().enumerate().rev() {
            let ls = &stash.layers[l];

            // Feed-forward block; dx currently holds the gradient at the
            // layer's output residual.
            let mut dact = vec![R::zero(); t * cfg.d_ff];
            mm_nt(&mut dact, &dx, &layer.w_ff2, t, d, cfg.d_ff, false);
            let mut dff1 = vec![R::zero(); t * cfg.d_ff];
            for i in 0..t * cfg.d_ff {
                dff1[i] = dact[i] * gelu_grad(ls.ff1[i]);
            }
            let mut dln2 = vec![R::zero(); t * d];
            mm_nt(&mut dln2, &dff1, &layer.w_ff1, t, cfg.d_ff, d, false);
            if let Some(g) = grads.as_deref_mut() {
                let gl = &mut g.layers[l];
                mm_tn(&mut gl.w_ff2, &ls.act, &dx, cfg.d_ff, t, d, true);
                colsum_acc(&mut gl.b_ff2, &dx, t, d);
                mm_tn(&mut gl.w_ff1, &ls.ln2_out, &dff1, d, t, cfg.d_ff, true);
                colsum_acc(&mut gl.b_ff1, &dff1, t, cfg.d_ff);
            }
            {
                let (dg, db) = match grads.as_deref_mut() {
                    Some(g) => {
                        let gl = &mut g.layers[l];
                        (Some(&mut gl.ln2_g), Some(&mut gl.ln2_b))
                    }
                    None => (None, None),
                };
                layer_norm_backward(
                    &ls.x_mid,
                    &layer.ln2_g,
                    &ls.ln2_mean,
                    &ls.ln2_rstd,
                    &dln2,
                    &mut dx,
                    dg,
                    db,
                    d,
                );
            }

            // Attention block; dx now holds the gradient at x_mid.
            let mut datt = vec![R::zero(); t * d];
            mm_nt(&mut datt, &dx, &layer.w_o, t, d, d, false);
            if let Some(g) = grads.as_deref_mut() {
                let gl = &mut g.layers[l];
                mm_tn(&mut gl.w_o, &ls.att, &dx, d, t, d, true);
                colsum_acc(&mut gl.b_o, &dx, t, d);
            }

            let mut dqkv = vec![R::zero(); t * 3 * d];
            let qkv_row = |pos: usize| &ls.qkv[pos * 3 * d..(pos + 1) * 3 * d];
            for h in 0..cfg.n_heads {
                let q_off = h * dh_dim;
                let k_off = d + h * dh_dim;
                let v_off = 2 * d + h * dh_dim;
                let mut dprobs = vec![R::zero(); t];
                for i in 0..t {
                    let dhead = &datt[i * d + q_off..i * d + q_off + dh_dim];
                    let p_row = &ls.probs[(h * t + i) * t..(h * t + i) * t + i + 1];
                    let mut row_dot = R::zero();
                    for j in 0..=i {
                        let dp = dot(dhead, &qkv_row(j)[v_off..v_off + dh_dim]);
                        dprobs[j] = dp;
                        row_dot = row_dot + p_row[j] * dp;
                    }
                    for j in 0..=i {
                        let p = p_row[j];
                        if p == R::zero() {
                            continue;
                        }
                        // Value gradient.
                        axpy(
                            &mut dqkv[j * 3 * d + v_off..j * 3 * d + v_off + dh_dim],
                            p,
                            dhead,
                        );
                        // Softmax backward, then score scale.
                        let ds = p * (dprobs[j] - row_dot) * scale;
                        let (qi, kj) = (qkv_row(i), qkv_row(j));
                        axpy(
                            &mut dqkv[i * 3 * d + q_off..i * 3 * d + q_off + dh_dim],
                            ds,
                            &kj[k_off..k_off + dh_dim],
                        );
                        axpy(
                            &mut dqkv[j * 3 * d + k_off..j * 3 * d + k_off + dh_dim],
                            ds,
                            &qi[q_off..q_off + dh_dim],
                        );
                    }
                }
            }

            let mut dln1 = vec![R::zero(); t * d];
            mm_nt(&mut dln1, &dqkv, &layer.w_qkv, t, 3 * d, d, false);
            if let Some(g) = grads.as_deref_mut() {
                let gl = &mut g.layers[l];
                mm_tn(&mut gl.w_qkv, &ls.ln1_out, &dqkv, d, t, 3 * d, true);
                colsum_acc(&mut gl.b_qkv, &dqkv, t, 3 * d);
            }
            {
                let (dg, db) = match grads.as_deref_mut() {
                    Some(g) => {
                        let gl = &mut g.layers[l];
                        (Some(&mut gl.ln1_g), Some(&mut gl.ln1_b))
                    }
                    None => (None, None),
                };
                layer_norm_backward(
                    &ls.x_in,
                    &layer.ln1_g,
                    &ls.ln1_mean,
                    &ls.ln1_rstd,
                    &dln1,
                    &mut dx,
                    dg,
                    db,
                    d,
                );
            }
        }

        // Embedding scatter.
        if let Some(g) = grads {
            for (i, &tok) in tokens.iter().enumerate() {
                axpy(
                    &mut g.tok_emb[tok as usize * d..(tok as usize + 1) * d],
                    R::one(),
                    &dx[i * d..(i + 1) * d],
                );
                axpy(
                    &mut g.pos_emb[i * d..(i + 1) * d],
                    R::one(),
                    &dx[i * d..(i + 1) * d],
                );
            }
        }
        if let Some((row, acc)) = row_acc.as_mut() {
            for (i, &tok) in tokens.iter().enumerate() {
                if tok == *row {
                    axpy(acc, R::one(), &dx[i * d..(i + 1) * d]);
                }
            }
        }
        Ok(())
    }
}

/// Backward through layer norm, accumulating `dx` and optionally the gain
/// and bias gradients.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward<R: Real>(
    x: &[R],
    g: &[R],
    means: &[R],
    rstds: &[R],
    dy: &[R],
    dx: &mut [R],
    mut dg: Option<&mut Vec<R>>,
    mut db: Option<&mut Vec<R>>,
    d: usize,
) {
    let t = x.len() / d;
    let inv_d = R::one() / R::from_usize(d);
    for i in 0..t {
        let xr = &x[i * d..(i + 1) * d];
        let dyr = &dy[i * d..(i + 1) * d];
        let mean = means[i];
        let rstd = rstds[i];
        let mut m1 = R::zero();
        let mut m2 = R::zero();
        for j in 0..d {
            let xhat = (xr[j] - mean) * rstd;
            let dxhat = dyr[j] * g[j];
            m1 = m1 + dxhat;
            m2 = m2 + dxhat * xhat;
        }
        m1 = m1 * inv_d;
        m2 = m2 * inv_d;
        let dxr = &mut dx[i * d..(i + 1) * d];
        for j in 0..d {
            let xhat = (xr[j] - mean) * rstd;
            let dxhat = dyr[j] * g[j];
            dxr[j] = dxr[j] + rstd * (dxhat - m1 - xhat * m2);
        }
        if let Some(dg) = dg.as_mut() {
            for j in 0..d {
                let xhat = (xr[j] - mean) * rstd;
                dg[j] = dg[j] + dyr[j] * xhat;
            }
        }
        if let Some(db) = db.as_mut() {
            for j in 0..d {
                db[j] = db[j] + dyr[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_config;
    use super::*;
    use crate::rng::SamplerState;
    use alloc::vec;

    /// Central finite difference of the weighted log-probability objective
    /// with respect to one coordinate of the continuation row.
    fn fd_row_grad(
        model: &Model<f64>,
        tokens: &[TokenId],
        weights: &[f64],
        temperature: f64,
        coord: usize,
        h: f64,
    ) -> f64 {
        let row = model.config.continuation.unwrap() as usize;
        let d = model.config.d_model;
        let objective = |m: &Model<f64>| -> f64 {
            let mask: Vec<bool> = weights.iter().map(|&w| w != 0.0).collect();
            let lps = m.sequence_logprobs(tokens, &mask, temperature).unwrap();
            lps.iter()
                .zip(weights)
                .map(|(lp, &w)| lp.map_or(0.0, |l| w * l))
                .sum()
        };
        let mut plus = model.clone();
        plus.params.tok_emb[row * d + coord] += h;
        let mut minus = model.clone();
        minus.params.tok_emb[row * d + coord] -= h;
        (objective(&plus) - objective(&minus)) / (2.0 * h)
    }

    fn random_weighted_case(
        seed: u64,
        continue_in_normalizer: bool,
    ) -> (Model<f64>, Vec<TokenId>, Vec<f64>) {
        let mut cfg = tiny_config(12);
        cfg.continuation = Some(11);
        cfg.continue_in_normalizer = continue_in_normalizer;
        let model =
            Model::<f64>::init(cfg, &mut SamplerState::new(seed, 0).rng()).unwrap();
        let tokens = vec![1u32, 4, 11, 7, 2, 11, 9, 3, 0, 5];
        let mut weights = vec![0.0; tokens.len()];
        weights[3] = 1.0;
        weights[4] = -0.5;
        weights[7] = 2.0;
        weights[9] = 0.25;
        (model, tokens, weights)
    }

    #[test]
    fn row_grad_matches_finite_differences() {
        for flag in [false, true] {
            let (model, tokens, weights) = random_weighted_case(21, flag);
            let grad = model.grad_wrt_row(&tokens, &weights, 0.9).unwrap();
            for coord in [0, 3, 7] {
                let fd = fd_row_grad(&model, &tokens, &weights, 0.9, coord, 1e-5);
                let denom = fd.abs().max(grad[coord].abs()).max(1e-8);
                assert!(
                    (grad[coord] - fd).abs() / denom < 1e-4,
                    "normalizer={flag} coord={coord}: {} vs {fd}",
                    grad[coord]
                );
            }
        }
    }

    #[test]
    fn no_continuation_in_prefix_means_zero_gradient() {
        let mut cfg = tiny_config(12);
        cfg.continuation = Some(11);
        let model = Model::<f64>::init(cfg, &mut SamplerState::new(3, 0).rng()).unwrap();
        // Token 11 never appears, so with the excluded normalizer there is
        // no dependence path at all.
        let tokens = vec![1u32, 4, 7, 2, 9];
        let mut weights = vec![0.0; 5];
        weights[2] = 1.0;
        weights[4] = 1.0;
        let grad = model.grad_wrt_row(&tokens, &weights, 1.0).unwrap();
        assert!(grad.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn doubling_weights_doubles_gradient() {
        let (model, tokens, weights) = random_weighted_case(8, false);
        let g1 = model.grad_wrt_row(&tokens, &weights, 0.9).unwrap();
        let doubled: Vec<f64> = weights.iter().map(|w| w * 2.0).collect();
        let g2 = model.grad_wrt_row(&tokens, &doubled, 0.9).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn zeroed_network_logprob_is_uniform() {
        let model = Model::<f64>::zeros(tiny_config(9)).unwrap();
        let tokens = [1u32, 2, 3, 4];
        let mask = [false, true, true, true];
        let lps = model.sequence_logprobs(&tokens, &mask, 1.0).unwrap();
        for lp in lps.iter().skip(1) {
            let lp = lp.unwrap();
            assert!((lp - (-(9.0f64).ln())).abs() < 1e-12);
        }
        assert!(lps[0].is_none());
    }

    #[test]
    fn logprobs_match_log_softmax_gather() {
        let cfg = tiny_config(13);
        let model = Model::<f64>::init(cfg, &mut SamplerState::new(17, 0).rng()).unwrap();
        let tokens = [5u32, 1, 12, 8, 8, 0];
        let mask = [false, true, false, true, true, true];
        let temp = 0.7;
        let lps = model.sequence_logprobs(&tokens, &mask, temp).unwrap();
        // Independent path: explicit log-softmax over scaled logits.
        let logits = model.forward(&tokens).unwrap();
        for t in 1..tokens.len() {
            if !mask[t] {
                assert!(lps[t].is_none());
                continue;
            }
            let row = &logits[(t - 1) * 13..t * 13];
            let scaled: Vec<f64> = row.iter().map(|l| l / temp).collect();
            let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
            let want = scaled[tokens[t] as usize] - lse;
            assert!((lps[t].unwrap() - want).abs() < 1e-12);
        }
    }
}
