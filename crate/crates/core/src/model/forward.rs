//! Teacher-forced forward pass over a whole sequence, keeping the
//! activations the backward pass needs.

use alloc::vec;
use alloc::vec::Vec;

use super::linalg::{add_bias, axpy, dot, mm_nn, mm_nt};
use super::{Model, ModelConfig};
use crate::vocab::TokenId;
use crate::{Real, Result};

/// Per-layer activations stashed for backpropagation.
pub struct LayerStash<R> {
    /// Residual stream entering the layer.
    pub x_in: Vec<R>,
    pub ln1_mean: Vec<R>,
    pub ln1_rstd: Vec<R>,
    pub ln1_out: Vec<R>,
    /// Packed query/key/value activations, `[t, 3*d]`.
    pub qkv: Vec<R>,
    /// Softmaxed attention weights, `[head, t, t]` with zeros above the
    /// diagonal.
    pub probs: Vec<R>,
    /// Concatenated head outputs before the output projection.
    pub att: Vec<R>,
    /// Residual stream after the attention add.
    pub x_mid: Vec<R>,
    pub ln2_mean: Vec<R>,
    pub ln2_rstd: Vec<R>,
    pub ln2_out: Vec<R>,
    /// Feed-forward pre-activation.
    pub ff1: Vec<R>,
    /// Feed-forward activation output.
    pub act: Vec<R>,
}

/// Activations from one [`Model::forward_train`] call.
pub struct ForwardStash<R> {
    pub t: usize,
    pub layers: Vec<LayerStash<R>>,
    /// Residual stream entering the final layer norm.
    pub x_final: Vec<R>,
    pub ln_f_mean: Vec<R>,
    pub ln_f_rstd: Vec<R>,
    /// Normalized final hidden states, the input to the tied output
    /// projection.
    pub h: Vec<R>,
}

impl<R: Real> Model<R> {
    /// Logit rows for every position of `tokens`.
    pub fn forward(&self, tokens: &[TokenId]) -> Result<Vec<R>> {
        Ok(self.forward_train(tokens)?.0)
    }

    /// Logit rows plus stashed activations.
    pub fn forward_train(&self, tokens: &[TokenId]) -> Result<(Vec<R>, ForwardStash<R>)> {
        self.check_tokens(tokens)?;
        let cfg = &self.config;
        let d = cfg.d_model;
        let t = tokens.len();

        let mut x = vec![R::zero(); t * d];
        for (i, &tok) in tokens.iter().enumerate() {
            let e = &self.params.tok_emb[tok as usize * d..(tok as usize + 1) * d];
            let p = &self.params.pos_emb[i * d..(i + 1) * d];
            let row = &mut x[i * d..(i + 1) * d];
            for j in 0..d {
                row[j] = e[j] + p[j];
            }
        }

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for layer in &self.params.layers {
            let x_in = x.clone();

            let mut ln1_mean = vec![R::zero(); t];
            let mut ln1_rstd = vec![R::zero(); t];
            let mut ln1_out = vec![R::zero(); t * d];
            layer_norm(
                cfg,
                &x_in,
                &layer.ln1_g,
                &layer.ln1_b,
                &mut ln1_out,
                &mut ln1_mean,
                &mut ln1_rstd,
            );

            let mut qkv = vec![R::zero(); t * 3 * d];
            mm_nn(&mut qkv, &ln1_out, &layer.w_qkv, t, d, 3 * d, false);
            add_bias(&mut qkv, &layer.b_qkv, t, 3 * d);

            let (probs, att) = attention_forward(cfg, &qkv, t);

            let mut att_proj = vec![R::zero(); t * d];
            mm_nn(&mut att_proj, &att, &layer.w_o, t, d, d, false);
            add_bias(&mut att_proj, &layer.b_o, t, d);
            for (xi, &ai) in x.iter_mut().zip(&att_proj) {
                *xi = *xi + ai;
            }
            let x_mid = x.clone();

            let mut ln2_mean = vec![R::zero(); t];
            let mut ln2_rstd = vec![R::zero(); t];
            let mut ln2_out = vec![R::zero(); t * d];
            layer_norm(
                cfg,
                &x_mid,
                &layer.ln2_g,
                &layer.ln2_b,
                &mut ln2_out,
                &mut ln2_mean,
                &mut ln2_rstd,
            );

            let mut ff1 = vec![R::zero(); t * cfg.d_ff];
            mm_nn(&mut ff1, &ln2_out, &layer.w_ff1, t, d, cfg.d_ff, false);
            add_bias(&mut ff1, &layer.b_ff1, t, cfg.d_ff);
            let act: Vec<R> = ff1.iter().map(|&v| gelu(v)).collect();

            let mut ff2 = vec![R::zero(); t * d];
            mm_nn(&mut ff2, &act, &layer.w_ff2, t, cfg.d_ff, d, false);
            add_bias(&mut ff2, &layer.b_ff2, t, d);
            for (xi, &fi) in x.iter_mut().zip(&ff2) {
                *xi = *xi + fi;
            }

            layers.push(LayerStash {
                x_in,
                ln1_mean,
                ln1_rstd,
                ln1_out,
                qkv,
                probs,
                att,
                x_mid,
                ln2_mean,
                ln2_rstd,
                ln2_out,
                ff1,
                act,
            });
        }

        let x_final = x;
        let mut ln_f_mean = vec![R::zero(); t];
        let mut ln_f_rstd = vec![R::zero(); t];
        let mut h = vec![R::zero(); t * d];
        layer_norm(
            cfg,
            &x_final,
            &self.params.ln_f_g,
            &self.params.ln_f_b,
            &mut h,
            &mut ln_f_mean,
            &mut ln_f_rstd,
        );

        let mut logits = vec![R::zero(); t * cfg.vocab_size];
        mm_nt(&mut logits, &h, &self.params.tok_emb, t, d, cfg.vocab_size, false);

        Ok((
            logits,
            ForwardStash {
                t,
                layers,
                x_final,
                ln_f_mean,
                ln_f_rstd,
                h,
            },
        ))
    }
}

/// Causal multi-head attention from packed qkv activations. Returns the
/// softmaxed weights `[h, t, t]` and the concatenated head outputs `[t, d]`.
fn attention_forward<R: Real>(cfg: &ModelConfig, qkv: &[R], t: usize) -> (Vec<R>, Vec<R>) {
    let d = cfg.d_model;
    let dh = cfg.head_dim();
    let scale = R::from_f64(1.0 / libm::sqrt(dh as f64));
    let mut probs = vec![R::zero(); cfg.n_heads * t * t];
    let mut att = vec![R::zero(); t * d];
    let row = |pos: usize| &qkv[pos * 3 * d..(pos + 1) * 3 * d];
    for h in 0..cfg.n_heads {
        let q_off = h * dh;
        let k_off = d + h * dh;
        let v_off = 2 * d + h * dh;
        for i in 0..t {
            let q = &row(i)[q_off..q_off + dh];
            let p_row = &mut probs[(h * t + i) * t..(h * t + i) * t + i + 1];
            let mut max = R::neg_infinity();
            for (j, p) in p_row.iter_mut().enumerate() {
                let s = dot(q, &row(j)[k_off..k_off + dh]) * scale;
                *p = s;
                if s > max {
                    max = s;
                }
            }
            let mut sum = R::zero();
            for p in p_row.iter_mut() {
                *p = (*p - max).exp();
                sum = sum + *p;
            }
            let inv = R::one() / sum;
            for p in p_row.iter_mut() {
                *p = *p * inv;
            }
            let out = &mut att[i * d + h * dh..i * d + h * dh + dh];
            for j in 0..=i {
                let w = probs[(h * t + i) * t + j];
                axpy(out, w, &row(j)[v_off..v_off + dh]);
            }
        }
    }
    (probs, att)
}

/// Layer norm over the last dimension, also returning per-position mean and
/// reciprocal standard deviation for the backward pass.
pub(super) fn layer_norm<R: Real>(
    cfg: &ModelConfig,
    x: &[R],
    g: &[R],
    b: &[R],
    out: &mut [R],
    means: &mut [R],
    rstds: &mut [R],
) {
    let d = cfg.d_model;
    let t = x.len() / d;
    let eps = R::from_f64(cfg.layernorm_epsilon);
    let inv_d = R::one() / R::from_usize(d);
    for i in 0..t {
        let row = &x[i * d..(i + 1) * d];
        let mut mean = R::zero();
        for &v in row {
            mean = mean + v;
        }
        mean = mean * inv_d;
        let mut var = R::zero();
        for &v in row {
            let c = v - mean;
            var = var + c * c;
        }
        var = var * inv_d;
        let rstd = R::one() / (var + eps).sqrt();
        means[i] = mean;
        rstds[i] = rstd;
        let o = &mut out[i * d..(i + 1) * d];
        for j in 0..d {
            o[j] = (row[j] - mean) * rstd * g[j] + b[j];
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub(super) fn gelu<R: Real>(x: R) -> R {
    let c = R::from_f64(GELU_C);
    let a = R::from_f64(GELU_A);
    let half = R::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (R::one() + u.tanh())
}

/// Derivative of [`gelu`].
pub(super) fn gelu_grad<R: Real>(x: R) -> R {
    let c = R::from_f64(GELU_C);
    let a = R::from_f64(GELU_A);
    let half = R::from_f64(0.5);
    let three = R::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let sech2 = R::one() - th * th;
    half * (R::one() + th) + half * x * sech2 * c * (R::one() + three * a * x * x)
}
