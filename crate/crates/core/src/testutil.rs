//! Shared fixtures for in-crate tests.

use alloc::vec::Vec;

use crate::model::{Model, ModelConfig};
use crate::rng::SamplerState;
use crate::vocab::{TokenId, Vocab};

/// Character vocabulary with the continuation token registered.
pub(crate) fn vocab_with_continuation() -> Vocab {
    let mut vocab = Vocab::core_alphabet();
    vocab.add_continuation().unwrap();
    vocab
}

/// Small but real model over the full vocabulary, random-initialized.
pub(crate) fn small_model(seed: u64) -> (Vocab, Model<f32>) {
    let vocab = vocab_with_continuation();
    let config = ModelConfig {
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_ff: 32,
        context_len: 96,
        vocab_size: vocab.size(),
        layernorm_epsilon: 1e-5,
        continuation: vocab.special.continuation,
        continue_in_normalizer: false,
    };
    let model = Model::init(config, &mut SamplerState::new(seed, 0).rng()).unwrap();
    (vocab, model)
}

/// A minimal well-formed generation prompt ending inside thinking.
pub(crate) fn think_prompt(vocab: &Vocab) -> Vec<TokenId> {
    vocab.encode("<bos>Q: 1+1\n<think>").unwrap()
}
