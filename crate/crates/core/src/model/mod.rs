//! Decoder-only transformer with manual forward and backward passes.
//!
//! Pre-norm GPT-2 layout: token + position embeddings, per-layer attention
//! and feed-forward blocks with residual connections, a final layer norm,
//! and an output projection tied to the input embedding. Everything is
//! plain row-major `Vec` math so the gradient path stays auditable; the
//! scalar type is generic so the same code runs in `f32` for speed and
//! `f64` for gradient checking.
//!
//! One embedding row may be designated as the continuation token. That
//! token is banned from sampling and, by default, excluded from the
//! softmax normalizer when scoring realized tokens, so its embedding
//! influences generation only through the input path once injected. The
//! `continue_in_normalizer` switch restores full-softmax scoring for
//! ablation.

mod adamw;
mod backward;
mod checkpoint;
mod decode;
mod forward;
mod linalg;
mod pretrain;
mod sample;

pub use adamw::AdamW;
pub use backward::BackwardMode;
pub use checkpoint::{fnv1a64, load_checkpoint, save_checkpoint};
pub use decode::DecodeState;
pub use forward::ForwardStash;
pub use sample::{row_logprob, sample_next};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::vocab::TokenId;
use crate::{Error, Real, Result};

/// Architecture and behavior settings for one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub vocab_size: usize,
    pub layernorm_epsilon: f64,
    /// Token treated as the continuation token: never sampled, and kept out
    /// of log-probability normalizers unless `continue_in_normalizer`.
    pub continuation: Option<TokenId>,
    pub continue_in_normalizer: bool,
}

impl ModelConfig {
    /// Default desk-scale architecture.
    pub fn reference(vocab_size: usize, continuation: Option<TokenId>) -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            context_len: 512,
            vocab_size,
            layernorm_epsilon: 1e-5,
            continuation,
            continue_in_normalizer: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0
            || self.n_layers == 0
            || self.n_heads == 0
            || self.d_ff == 0
            || self.context_len == 0
            || self.vocab_size == 0
        {
            return Err(Error::InvalidConfig("all dimensions must be positive"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig("d_model must be divisible by n_heads"));
        }
        if self.layernorm_epsilon.is_nan() || self.layernorm_epsilon <= 0.0 {
            return Err(Error::InvalidConfig("layernorm_epsilon must be positive"));
        }
        if let Some(c) = self.continuation {
            if c as usize >= self.vocab_size {
                return Err(Error::InvalidConfig("continuation id outside vocabulary"));
            }
        }
        Ok(())
    }

    pub(crate) fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Weights of one transformer layer. Matrices are row-major with the input
/// dimension first, so `y = x @ w + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<R> {
    pub ln1_g: Vec<R>,
    pub ln1_b: Vec<R>,
    pub w_qkv: Vec<R>,
    pub b_qkv: Vec<R>,
    pub w_o: Vec<R>,
    pub b_o: Vec<R>,
    pub ln2_g: Vec<R>,
    pub ln2_b: Vec<R>,
    pub w_ff1: Vec<R>,
    pub b_ff1: Vec<R>,
    pub w_ff2: Vec<R>,
    pub b_ff2: Vec<R>,
}

/// Full parameter set. The output projection is `tok_emb` transposed.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<R> {
    pub tok_emb: Vec<R>,
    pub pos_emb: Vec<R>,
    pub layers: Vec<LayerParams<R>>,
    pub ln_f_g: Vec<R>,
    pub ln_f_b: Vec<R>,
}

impl<R: Real> Parameters<R> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let layer = || LayerParams {
            ln1_g: vec![R::zero(); d],
            ln1_b: vec![R::zero(); d],
            w_qkv: vec![R::zero(); d * 3 * d],
            b_qkv: vec![R::zero(); 3 * d],
            w_o: vec![R::zero(); d * d],
            b_o: vec![R::zero(); d],
            ln2_g: vec![R::zero(); d],
            ln2_b: vec![R::zero(); d],
            w_ff1: vec![R::zero(); d * config.d_ff],
            b_ff1: vec![R::zero(); config.d_ff],
            w_ff2: vec![R::zero(); config.d_ff * d],
            b_ff2: vec![R::zero(); d],
        };
        Parameters {
            tok_emb: vec![R::zero(); config.vocab_size * d],
            pos_emb: vec![R::zero(); config.context_len * d],
            layers: (0..config.n_layers).map(|_| layer()).collect(),
            ln_f_g: vec![R::zero(); d],
            ln_f_b: vec![R::zero(); d],
        }
    }

    /// Named views over every tensor, in canonical order. This order fixes
    /// the checkpoint manifest, the initialization draw sequence, and the
    /// optimizer state layout.
    pub fn tensor_views(&self, config: &ModelConfig) -> Vec<(String, &[R], Vec<usize>)> {
        let d = config.d_model;
        let mut out: Vec<(String, &[R], Vec<usize>)> = vec![
            (
                "tok_emb".into(),
                self.tok_emb.as_slice(),
                vec![config.vocab_size, d],
            ),
            (
                "pos_emb".into(),
                self.pos_emb.as_slice(),
                vec![config.context_len, d],
            ),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |name: &str| format!("layer{i}.{name}");
            out.push((p("ln1_g"), l.ln1_g.as_slice(), vec![d]));
            out.push((p("ln1_b"), l.ln1_b.as_slice(), vec![d]));
            out.push((p("w_qkv"), l.w_qkv.as_slice(), vec![d, 3 * d]));
            out.push((p("b_qkv"), l.b_qkv.as_slice(), vec![3 * d]));
            out.push((p("w_o"), l.w_o.as_slice(), vec![d, d]));
            out.push((p("b_o"), l.b_o.as_slice(), vec![d]));
            out.push((p("ln2_g"), l.ln2_g.as_slice(), vec![d]));
            out.push((p("ln2_b"), l.ln2_b.as_slice(), vec![d]));
            out.push((p("w_ff1"), l.w_ff1.as_slice(), vec![d, config.d_ff]));
            out.push((p("b_ff1"), l.b_ff1.as_slice(), vec![config.d_ff]));
            out.push((p("w_ff2"), l.w_ff2.as_slice(), vec![config.d_ff, d]));
            out.push((p("b_ff2"), l.b_ff2.as_slice(), vec![d]));
        }
        out.push(("ln_f_g".into(), self.ln_f_g.as_slice(), vec![d]));
        out.push(("ln_f_b".into(), self.ln_f_b.as_slice(), vec![d]));
        out
    }

    /// Mutable tensors in the same canonical order as [`tensor_views`].
    ///
    /// [`tensor_views`]: Parameters::tensor_views
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<R>> {
        let mut out: Vec<&mut Vec<R>> = vec![&mut self.tok_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            out.push(&mut l.ln1_g);
            out.push(&mut l.ln1_b);
            out.push(&mut l.w_qkv);
            out.push(&mut l.b_qkv);
            out.push(&mut l.w_o);
            out.push(&mut l.b_o);
            out.push(&mut l.ln2_g);
            out.push(&mut l.ln2_b);
            out.push(&mut l.w_ff1);
            out.push(&mut l.b_ff1);
            out.push(&mut l.w_ff2);
            out.push(&mut l.b_ff2);
        }
        out.push(&mut self.ln_f_g);
        out.push(&mut self.ln_f_b);
        out
    }

    /// Immutable tensors in canonical order.
    pub fn tensors(&self) -> Vec<&Vec<R>> {
        let mut out: Vec<&Vec<R>> = vec![&self.tok_emb, &self.pos_emb];
        for l in &self.layers {
            out.push(&l.ln1_g);
            out.push(&l.ln1_b);
            out.push(&l.w_qkv);
            out.push(&l.b_qkv);
            out.push(&l.w_o);
            out.push(&l.b_o);
            out.push(&l.ln2_g);
            out.push(&l.ln2_b);
            out.push(&l.w_ff1);
            out.push(&l.b_ff1);
            out.push(&l.w_ff2);
            out.push(&l.b_ff2);
        }
        out.push(&self.ln_f_g);
        out.push(&self.ln_f_b);
        out
    }

    pub fn map<S: Real>(&self, f: impl Fn(R) -> S + Copy) -> Parameters<S> {
        let conv = |v: &Vec<R>| v.iter().map(|&x| f(x)).collect::<Vec<S>>();
        Parameters {
            tok_emb: conv(&self.tok_emb),
            pos_emb: conv(&self.pos_emb),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1_g: conv(&l.ln1_g),
                    ln1_b: conv(&l.ln1_b),
                    w_qkv: conv(&l.w_qkv),
                    b_qkv: conv(&l.b_qkv),
                    w_o: conv(&l.w_o),
                    b_o: conv(&l.b_o),
                    ln2_g: conv(&l.ln2_g),
                    ln2_b: conv(&l.ln2_b),
                    w_ff1: conv(&l.w_ff1),
                    b_ff1: conv(&l.b_ff1),
                    w_ff2: conv(&l.w_ff2),
                    b_ff2: conv(&l.b_ff2),
                })
                .collect(),
            ln_f_g: conv(&self.ln_f_g),
            ln_f_b: conv(&self.ln_f_b),
        }
    }
}

/// A config plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<R> {
    pub config: ModelConfig,
    pub params: Parameters<R>,
}

impl<R: Real> Model<R> {
    /// Fresh model with weights and embeddings drawn from a zero-mean
    /// normal with standard deviation `1/sqrt(d_model)`; biases zero,
    /// layer-norm gains one.
    pub fn init(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Model<R>> {
        config.validate()?;
        let mut params = Parameters::<R>::zeros(&config);
        let std = 1.0 / libm::sqrt(config.d_model as f64);
        let gains = |name: &str| name.contains("ln") && name.ends_with("_g");
        let biases =
            |name: &str| name.starts_with("b_") || name.contains(".b_") || name.ends_with("_b");
        let names: Vec<String> = params
            .tensor_views(&config)
            .into_iter()
            .map(|(n, _, _)| n)
            .collect();
        for (tensor, name) in params.tensors_mut().into_iter().zip(&names) {
            if gains(name) {
                tensor.fill(R::one());
            } else if biases(name) {
                tensor.fill(R::zero());
            } else {
                for x in tensor.iter_mut() {
                    *x = R::from_f64(std * normal_draw(rng));
                }
            }
        }
        Ok(Model { config, params })
    }

    pub fn zeros(config: ModelConfig) -> Result<Model<R>> {
        config.validate()?;
        let params = Parameters::zeros(&config);
        Ok(Model { config, params })
    }

    /// Copies one embedding row onto another (used to seed the continuation
    /// row from a cue row).
    pub fn copy_embedding_row(&mut self, from: TokenId, to: TokenId) -> Result<()> {
        let d = self.config.d_model;
        let v = self.config.vocab_size;
        for id in [from, to] {
            if id as usize >= v {
                return Err(Error::IdOutOfRange { id, vocab_size: v });
            }
        }
        let (from, to) = (from as usize * d, to as usize * d);
        for i in 0..d {
            self.params.tok_emb[to + i] = self.params.tok_emb[from + i];
        }
        Ok(())
    }

    pub fn embedding_row(&self, id: TokenId) -> Result<&[R]> {
        let d = self.config.d_model;
        if id as usize >= self.config.vocab_size {
            return Err(Error::IdOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(&self.params.tok_emb[id as usize * d..(id as usize + 1) * d])
    }

    pub fn map<S: Real>(&self, f: impl Fn(R) -> S + Copy) -> Model<S> {
        Model {
            config: self.config.clone(),
            params: self.params.map(f),
        }
    }

    pub(crate) fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.len() > self.config.context_len {
            return Err(Error::ContextOverflow {
                len: tokens.len(),
                limit: self.config.context_len,
            });
        }
        for &t in tokens {
            if t as usize >= self.config.vocab_size {
                return Err(Error::IdOutOfRange {
                    id: t,
                    vocab_size: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }
}

impl Model<f32> {
    pub fn to_f64(&self) -> Model<f64> {
        self.map(|x| x as f64)
    }
}

/// One standard normal draw via Box-Muller.
fn normal_draw(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SamplerState;

    pub(crate) fn tiny_config(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            context_len: 32,
            vocab_size,
            layernorm_epsilon: 1e-5,
            continuation: None,
            continue_in_normalizer: false,
        }
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let cfg = tiny_config(11);
        let a = Model::<f32>::init(cfg.clone(), &mut SamplerState::new(3, 0).rng()).unwrap();
        let b = Model::<f32>::init(cfg, &mut SamplerState::new(3, 0).rng()).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn init_sets_gains_to_one_and_biases_to_zero() {
        let cfg = tiny_config(11);
        let m = Model::<f32>::init(cfg, &mut SamplerState::new(1, 0).rng()).unwrap();
        assert!(m.params.layers[0].ln1_g.iter().all(|&x| x == 1.0));
        assert!(m.params.ln_f_g.iter().all(|&x| x == 1.0));
        assert!(m.params.layers[0].b_qkv.iter().all(|&x| x == 0.0));
        assert!(m.params.ln_f_b.iter().all(|&x| x == 0.0));
        assert!(m.params.tok_emb.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn validate_rejects_bad_shapes() {
        let mut cfg = tiny_config(11);
        cfg.n_heads = 3;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let mut cfg = tiny_config(11);
        cfg.continuation = Some(11);
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn copy_embedding_row_copies_exactly() {
        let cfg = tiny_config(11);
        let mut m = Model::<f32>::init(cfg, &mut SamplerState::new(5, 0).rng()).unwrap();
        m.copy_embedding_row(3, 7).unwrap();
        let d = m.config.d_model;
        assert_eq!(
            m.params.tok_emb[3 * d..4 * d],
            m.params.tok_emb[7 * d..8 * d]
        );
    }
}
