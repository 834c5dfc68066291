//! Temperature sampling and realized-token scoring on a single logit row.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::vocab::TokenId;
use crate::{Error, Real, Result};

/// Draws one token from `softmax(logits / temperature)` with the banned
/// tokens' probabilities forced to zero. Consumes exactly one draw from
/// `rng`.
pub fn sample_next<R: Real>(
    logits: &[R],
    temperature: R,
    rng: &mut ChaCha8Rng,
    banned: &[TokenId],
) -> Result<TokenId> {
    let is_banned = |j: usize| banned.iter().any(|&b| b as usize == j);
    let inv_t = 1.0 / temperature.to_f64();
    let mut max = f64::NEG_INFINITY;
    for (j, &l) in logits.iter().enumerate() {
        if is_banned(j) {
            continue;
        }
        let s = l.to_f64() * inv_t;
        if s > max {
            max = s;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::AllTokensBanned);
    }
    let mut total = 0.0;
    for (j, &l) in logits.iter().enumerate() {
        if is_banned(j) {
            continue;
        }
        total += libm::exp(l.to_f64() * inv_t - max);
    }
    let u: f64 = rng.random();
    let target = u * total;
    let mut cum = 0.0;
    let mut last_allowed = None;
    for (j, &l) in logits.iter().enumerate() {
        if is_banned(j) {
            continue;
        }
        cum += libm::exp(l.to_f64() * inv_t - max);
        last_allowed = Some(j as TokenId);
        if cum > target {
            return Ok(j as TokenId);
        }
    }
    // Rounding can leave the cursor a hair past the final cumulative sum.
    Ok(last_allowed.expect("at least one allowed token"))
}

/// Log-probability of `token` under `softmax(logits / temperature)`, with
/// `excluded` (if any) left out of the normalizer.
pub fn row_logprob<R: Real>(
    logits: &[R],
    temperature: R,
    token: TokenId,
    excluded: Option<TokenId>,
) -> R {
    let inv_t = 1.0 / temperature.to_f64();
    let mut max = f64::NEG_INFINITY;
    for (j, &l) in logits.iter().enumerate() {
        if excluded == Some(j as TokenId) {
            continue;
        }
        let s = l.to_f64() * inv_t;
        if s > max {
            max = s;
        }
    }
    let mut sum = 0.0;
    for (j, &l) in logits.iter().enumerate() {
        if excluded == Some(j as TokenId) {
            continue;
        }
        sum += libm::exp(l.to_f64() * inv_t - max);
    }
    let lse = max + libm::log(sum);
    R::from_f64(logits[token as usize].to_f64() * inv_t - lse)
}
