//! Checkpoint byte format.
//!
//! Layout: magic `"BFTK"`, format version (u32), the model config, the
//! vocabulary, a manifest of named tensor shapes, the tensor payloads as
//! row-major little-endian `f32`, and a trailing 64-bit FNV-1a checksum of
//! everything after the magic and version. A wrong magic or version is a
//! format mismatch; a bad length or checksum is corruption.

use alloc::string::String;
use alloc::vec::Vec;

use super::{Model, ModelConfig};
use crate::vocab::{FixedCues, SpecialTokens, TokenId, Vocab};
use crate::{Error, Real, Result};

const MAGIC: &[u8; 4] = b"BFTK";
const VERSION: u32 = 1;

/// 64-bit FNV-1a over `bytes`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Serializes a model and its vocabulary.
pub fn save_checkpoint<R: Real>(model: &Model<R>, vocab: &Vocab) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());

    let cfg = &model.config;
    put_u32(&mut out, cfg.d_model as u32);
    put_u32(&mut out, cfg.n_layers as u32);
    put_u32(&mut out, cfg.n_heads as u32);
    put_u32(&mut out, cfg.d_ff as u32);
    put_u32(&mut out, cfg.context_len as u32);
    put_u32(&mut out, cfg.vocab_size as u32);
    out.extend_from_slice(&cfg.layernorm_epsilon.to_le_bytes());
    put_opt_id(&mut out, cfg.continuation);
    out.push(cfg.continue_in_normalizer as u8);

    put_u32(&mut out, vocab.size() as u32);
    for (_, sym) in vocab.iter() {
        put_str(&mut out, sym);
    }
    put_u32(&mut out, vocab.special.bos);
    put_u32(&mut out, vocab.special.eos);
    put_u32(&mut out, vocab.special.think_open);
    put_u32(&mut out, vocab.special.think_close);
    put_opt_id(&mut out, vocab.special.continuation);
    put_u32(&mut out, vocab.cues.wait);
    put_u32(&mut out, vocab.cues.alt);
    put_u32(&mut out, vocab.cues.hmm);
    put_u32(&mut out, vocab.cues.critique);

    let views = model.params.tensor_views(cfg);
    put_u32(&mut out, views.len() as u32);
    for (name, _, shape) in &views {
        put_str(&mut out, name);
        put_u32(&mut out, shape.len() as u32);
        for &dim in shape {
            put_u32(&mut out, dim as u32);
        }
    }
    for (_, data, _) in &views {
        for &x in *data {
            out.extend_from_slice(&(x.to_f64() as f32).to_le_bytes());
        }
    }

    let checksum = fnv1a64(&out[8..]);
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

/// Parses checkpoint bytes back into a model and vocabulary.
pub fn load_checkpoint(bytes: &[u8]) -> Result<(Model<f32>, Vocab)> {
    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(Error::FormatVersionMismatch);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::FormatVersionMismatch);
    }
    if bytes.len() < 16 {
        return Err(Error::CorruptChecksum);
    }
    let body = &bytes[8..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    if fnv1a64(body) != stored {
        return Err(Error::CorruptChecksum);
    }

    let mut r = Reader { buf: body, pos: 0 };
    let d_model = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    let n_heads = r.u32()? as usize;
    let d_ff = r.u32()? as usize;
    let context_len = r.u32()? as usize;
    let vocab_size = r.u32()? as usize;
    let layernorm_epsilon = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let continuation = r.opt_id()?;
    let continue_in_normalizer = r.take(1)?[0] != 0;
    let config = ModelConfig {
        d_model,
        n_layers,
        n_heads,
        d_ff,
        context_len,
        vocab_size,
        layernorm_epsilon,
        continuation,
        continue_in_normalizer,
    };
    config.validate().map_err(|_| Error::CorruptChecksum)?;

    let n_symbols = r.u32()? as usize;
    let mut symbols = Vec::with_capacity(n_symbols);
    for _ in 0..n_symbols {
        symbols.push(r.string()?);
    }
    let special = SpecialTokens {
        bos: r.u32()?,
        eos: r.u32()?,
        think_open: r.u32()?,
        think_close: r.u32()?,
        continuation: r.opt_id()?,
    };
    let cues = FixedCues {
        wait: r.u32()?,
        alt: r.u32()?,
        hmm: r.u32()?,
        critique: r.u32()?,
    };
    let vocab = Vocab::from_parts(symbols, special, cues).map_err(|_| Error::CorruptChecksum)?;

    let n_tensors = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32()? as usize);
        }
        shapes.push((name, dims));
    }

    let mut model = Model::<f32>::zeros(config).map_err(|_| Error::CorruptChecksum)?;
    {
        let expected = model.params.tensor_views(&model.config);
        if expected.len() != shapes.len() {
            return Err(Error::CorruptChecksum);
        }
        for ((want_name, _, want_shape), (name, dims)) in expected.iter().zip(&shapes) {
            if want_name != name || want_shape != dims {
                return Err(Error::CorruptChecksum);
            }
        }
    }
    for tensor in model.params.tensors_mut() {
        for x in tensor.iter_mut() {
            *x = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
        }
    }
    if r.pos != r.buf.len() {
        return Err(Error::CorruptChecksum);
    }
    Ok((model, vocab))
}

impl Vocab {
    /// Rebuilds a vocabulary from serialized parts, re-validating the
    /// bijection and the named ids.
    pub fn from_parts(
        symbols: Vec<String>,
        special: SpecialTokens,
        cues: FixedCues,
    ) -> Result<Vocab> {
        let mut base = Vocab::core_alphabet();
        // The serialized symbol list must extend the core alphabet; extra
        // entries are re-registered to rebuild the lookup table.
        let core_size = base.size();
        if symbols.len() < core_size {
            return Err(Error::CorruptChecksum);
        }
        for (i, sym) in symbols.iter().enumerate() {
            if i < core_size {
                if base.symbol(i as TokenId)? != sym {
                    return Err(Error::CorruptChecksum);
                }
            } else {
                base.add_special(sym)?;
            }
        }
        if base.special.bos != special.bos
            || base.special.eos != special.eos
            || base.special.think_open != special.think_open
            || base.special.think_close != special.think_close
            || base.cues != cues
        {
            return Err(Error::CorruptChecksum);
        }
        if let Some(c) = special.continuation {
            if base.symbol(c)? != crate::vocab::CONTINUE_SYMBOL {
                return Err(Error::CorruptChecksum);
            }
        }
        base.special.continuation = special.continuation;
        Ok(base)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CorruptChecksum);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn opt_id(&mut self) -> Result<Option<TokenId>> {
        let raw = i64::from_le_bytes(self.take(8)?.try_into().unwrap());
        if raw < 0 {
            Ok(None)
        } else {
            Ok(Some(raw as TokenId))
        }
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        core::str::from_utf8(bytes)
            .map(|s| s.into())
            .map_err(|_| Error::CorruptChecksum)
    }
}

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_opt_id(out: &mut Vec<u8>, id: Option<TokenId>) {
    let raw: i64 = id.map_or(-1, |x| x as i64);
    out.extend_from_slice(&raw.to_le_bytes());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SamplerState;

    fn sample_model() -> (Model<f32>, Vocab) {
        let mut vocab = Vocab::core_alphabet();
        let cont = vocab.add_continuation().unwrap();
        let config = ModelConfig {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            context_len: 32,
            vocab_size: vocab.size(),
            layernorm_epsilon: 1e-5,
            continuation: Some(cont),
            continue_in_normalizer: false,
        };
        let model = Model::<f32>::init(config, &mut SamplerState::new(7, 0).rng()).unwrap();
        (model, vocab)
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let (model, vocab) = sample_model();
        let bytes = save_checkpoint(&model, &vocab);
        let (loaded, loaded_vocab) = load_checkpoint(&bytes).unwrap();
        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.params, model.params);
        assert_eq!(loaded_vocab, vocab);
        // Serializing again yields the same bytes.
        assert_eq!(save_checkpoint(&loaded, &loaded_vocab), bytes);
    }

    #[test]
    fn wrong_magic_is_a_format_mismatch() {
        let (model, vocab) = sample_model();
        let mut bytes = save_checkpoint(&model, &vocab);
        bytes[0] = b'X';
        assert_eq!(load_checkpoint(&bytes), Err(Error::FormatVersionMismatch));
        let mut versioned = save_checkpoint(&model, &vocab);
        versioned[4] = 99;
        assert_eq!(
            load_checkpoint(&versioned),
            Err(Error::FormatVersionMismatch)
        );
    }

    #[test]
    fn truncation_is_corruption() {
        let (model, vocab) = sample_model();
        let bytes = save_checkpoint(&model, &vocab);
        for cut in [bytes.len() - 1, bytes.len() - 9, bytes.len() / 2, 12] {
            assert_eq!(
                load_checkpoint(&bytes[..cut]),
                Err(Error::CorruptChecksum),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn flipped_payload_bit_is_corruption() {
        let (model, vocab) = sample_model();
        let mut bytes = save_checkpoint(&model, &vocab);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert_eq!(load_checkpoint(&bytes), Err(Error::CorruptChecksum));
    }
}
