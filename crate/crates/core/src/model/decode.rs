//! Incremental decoding with cached keys and values.
//!
//! Generation feeds one token at a time; each step caches the new key and
//! value rows per layer and returns the logits for the next position, so a
//! rollout costs one matrix-vector pass per token instead of re-running
//! the whole prefix.

use alloc::vec;
use alloc::vec::Vec;

use super::linalg::{axpy, dot};
use super::Model;
use crate::vocab::TokenId;
use crate::{Error, Real, Result};

/// Mutable state of one generation stream.
pub struct DecodeState<R> {
    pos: usize,
    /// Per-layer key cache, `[context_len, d]`, filled up to `pos`.
    k: Vec<Vec<R>>,
    /// Per-layer value cache.
    v: Vec<Vec<R>>,
}

impl<R: Real> DecodeState<R> {
    /// Number of tokens consumed so far.
    pub fn len(&self) -> usize {
        self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos == 0
    }
}

impl<R: Real> Model<R> {
    pub fn decode_state(&self) -> DecodeState<R> {
        let per_layer = self.config.context_len * self.config.d_model;
        DecodeState {
            pos: 0,
            k: (0..self.config.n_layers).map(|_| vec![R::zero(); per_layer]).collect(),
            v: (0..self.config.n_layers).map(|_| vec![R::zero(); per_layer]).collect(),
        }
    }

    /// Consumes `token` at the next position and returns the logit row
    /// predicting the following token.
    pub fn decode_step(&self, state: &mut DecodeState<R>, token: TokenId) -> Result<Vec<R>> {
        let cfg = &self.config;
        let d = cfg.d_model;
        let dh = cfg.head_dim();
        let pos = state.pos;
        if pos >= cfg.context_len {
            return Err(Error::ContextOverflow {
                len: pos + 1,
                limit: cfg.context_len,
            });
        }
        if token as usize >= cfg.vocab_size {
            return Err(Error::IdOutOfRange {
                id: token,
                vocab_size: cfg.vocab_size,
            });
        }

        let mut x = vec![R::zero(); d];
        {
            let e = &self.params.tok_emb[token as usize * d..(token as usize + 1) * d];
            let p = &self.params.pos_emb[pos * d..(pos + 1) * d];
            for j in 0..d {
                x[j] = e[j] + p[j];
            }
        }

        let scale = R::from_f64(1.0 / libm::sqrt(dh as f64));
        let mut ln_out = vec![R::zero(); d];
        let mut qkv = vec![R::zero(); 3 * d];
        let mut att = vec![R::zero(); d];
        let mut proj = vec![R::zero(); d];
        let mut scores = vec![R::zero(); pos + 1];
        let mut ff1 = vec![R::zero(); cfg.d_ff];

        for (l, layer) in self.params.layers.iter().enumerate() {
            norm_row(&x, &layer.ln1_g, &layer.ln1_b, cfg.layernorm_epsilon, &mut ln_out);

            qkv.fill(R::zero());
            matvec_acc(&mut qkv, &ln_out, &layer.w_qkv, d, 3 * d);
            for (q, b) in qkv.iter_mut().zip(&layer.b_qkv) {
                *q = *q + *b;
            }

            let k_cache = &mut state.k[l];
            let v_cache = &mut state.v[l];
            k_cache[pos * d..(pos + 1) * d].copy_from_slice(&qkv[d..2 * d]);
            v_cache[pos * d..(pos + 1) * d].copy_from_slice(&qkv[2 * d..3 * d]);

            att.fill(R::zero());
            for h in 0..cfg.n_heads {
                let q = &qkv[h * dh..(h + 1) * dh];
                let mut max = R::neg_infinity();
                for (j, s) in scores.iter_mut().enumerate() {
                    let kv = &k_cache[j * d + h * dh..j * d + (h + 1) * dh];
                    *s = dot(q, kv) * scale;
                    if *s > max {
                        max = *s;
                    }
                }
                let mut sum = R::zero();
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    sum = sum + *s;
                }
                let inv = R::one() / sum;
                let out = &mut att[h * dh..(h + 1) * dh];
                for (j, s) in scores.iter().enumerate() {
                    let vv = &v_cache[j * d + h * dh..j * d + (h + 1) * dh];
                    axpy(out, *s * inv, vv);
                }
            }

            proj.fill(R::zero());
            matvec_acc(&mut proj, &att, &layer.w_o, d, d);
            for j in 0..d {
                x[j] = x[j] + proj[j] + layer.b_o[j];
            }

            norm_row(&x, &layer.ln2_g, &layer.ln2_b, cfg.layernorm_epsilon, &mut ln_out);
            ff1.fill(R::zero());
            matvec_acc(&mut ff1, &ln_out, &layer.w_ff1, d, cfg.d_ff);
            for (f, &b) in ff1.iter_mut().zip(&layer.b_ff1) {
                *f = super::forward::gelu(*f + b);
            }
            proj.fill(R::zero());
            matvec_acc(&mut proj, &ff1, &layer.w_ff2, cfg.d_ff, d);
            for j in 0..d {
                x[j] = x[j] + proj[j] + layer.b_ff2[j];
            }
        }

        norm_row(&x, &self.params.ln_f_g, &self.params.ln_f_b, cfg.layernorm_epsilon, &mut ln_out);
        let v = cfg.vocab_size;
        let mut logits = vec![R::zero(); v];
        for (j, o) in logits.iter_mut().enumerate() {
            *o = dot(&ln_out, &self.params.tok_emb[j * d..(j + 1) * d]);
        }

        state.pos += 1;
        Ok(logits)
    }

    /// Feeds every token of `prefix`, returning the logit row after the
    /// last one.
    pub fn decode_prefix(&self, state: &mut DecodeState<R>, prefix: &[TokenId]) -> Result<Vec<R>> {
        let mut last = None;
        for &tok in prefix {
            last = Some(self.decode_step(state, tok)?);
        }
        last.ok_or(Error::MalformedPrompt)
    }
}

/// Layer norm of a single row.
fn norm_row<R: Real>(x: &[R], g: &[R], b: &[R], eps: f64, out: &mut [R]) {
    let d = x.len();
    let inv_d = R::one() / R::from_usize(d);
    let mut mean = R::zero();
    for &v in x {
        mean = mean + v;
    }
    mean = mean * inv_d;
    let mut var = R::zero();
    for &v in x {
        let c = v - mean;
        var = var + c * c;
    }
    var = var * inv_d;
    let rstd = R::one() / (var + R::from_f64(eps)).sqrt();
    for j in 0..d {
        out[j] = (x[j] - mean) * rstd * g[j] + b[j];
    }
}

/// `out[n] += x[m] @ w[m,n]`.
fn matvec_acc<R: Real>(out: &mut [R], x: &[R], w: &[R], m: usize, n: usize) {
    debug_assert_eq!(x.len(), m);
    debug_assert_eq!(w.len(), m * n);
    debug_assert_eq!(out.len(), n);
    for (k, &s) in x.iter().enumerate() {
        if s == R::zero() {
            continue;
        }
        axpy(out, s, &w[k * n..(k + 1) * n]);
    }
}
