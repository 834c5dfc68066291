//! Budget-forced generation.
//!
//! Decoding runs in two phases. During thinking, sampled end-of-thinking
//! tokens are intercepted: while fewer than `c_max` injections have
//! happened (and the injection still fits the thinking budget), the
//! sampled `</think>` is discarded and the configured injection appended
//! in its place, extending the thinking phase. When `b_max` generated
//! thinking tokens accumulate without a kept `</think>`, one is force
//! inserted. The answer phase then samples up to `answer_reserve` tokens,
//! stopping early at end-of-sequence.
//!
//! Token provenance is tracked per position so downstream consumers can
//! tell policy actions (SAMPLED) from harness interventions (INJECTED,
//! FORCED_CLOSE); only policy actions carry log-probabilities and only
//! they contribute to training objectives.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::model::{row_logprob, sample_next, DecodeState, Model};
use crate::rng::SamplerState;
use crate::vocab::{TokenId, Vocab};
use crate::{Error, Real, Result};

/// Budget-forcing settings for one generation.
#[derive(Debug, Clone, PartialEq)]
pub struct BFConfig {
    /// Maximum number of forced thinking continuations.
    pub c_max: usize,
    /// Thinking-token budget, counting sampled and injected tokens but not
    /// the closing marker itself.
    pub b_max: usize,
    /// Token budget of the answer phase.
    pub answer_reserve: usize,
    /// Token(s) appended in place of an intercepted `</think>`.
    pub injection: Vec<TokenId>,
    pub temperature: f64,
}

impl BFConfig {
    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        if self.b_max == 0 || self.answer_reserve == 0 {
            return Err(Error::InvalidConfig("budgets must be positive"));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::InvalidConfig("temperature must be positive"));
        }
        if self.c_max > 0 && self.injection.is_empty() {
            return Err(Error::InvalidConfig("injection must be non-empty when c_max > 0"));
        }
        if self
            .injection
            .iter()
            .any(|&t| t == vocab.special.think_close || t == vocab.special.eos)
        {
            return Err(Error::InvalidConfig(
                "injection may not contain </think> or <eos>",
            ));
        }
        Ok(())
    }
}

/// Where a trace token came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Prompt,
    Sampled,
    Injected,
    ForcedClose,
}

/// How the answer phase ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    AnswerEos,
    AnswerBudgetExhausted,
}

/// One complete generation with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTrace {
    pub prompt_len: usize,
    pub tokens: Vec<TokenId>,
    pub origin: Vec<Origin>,
    /// Start position of each injected group, in injection order.
    pub injection_positions: Vec<usize>,
    /// Position of the kept or forced `</think>`.
    pub think_end_position: usize,
    pub termination: Termination,
    /// Log-probability of each SAMPLED token under the policy that drew
    /// it; `None` elsewhere. Not part of the serialized trace format.
    pub sampled_logprobs: Vec<Option<f64>>,
}

impl GenerationTrace {
    /// Number of generated (non-prompt) tokens.
    pub fn generated_len(&self) -> usize {
        self.tokens.len() - self.prompt_len
    }

    /// True at positions whose token was drawn by the policy.
    pub fn sampled_mask(&self) -> Vec<bool> {
        self.origin.iter().map(|&o| o == Origin::Sampled).collect()
    }

    /// The answer-phase tokens (everything after the thinking close).
    pub fn answer_tokens(&self) -> &[TokenId] {
        &self.tokens[self.think_end_position + 1..]
    }

    /// Checks every structural invariant of a budget-forced trace against
    /// the configuration that produced it. Returns a description of the
    /// first violation found.
    pub fn verify_invariants(
        &self,
        cfg: &BFConfig,
        vocab: &Vocab,
    ) -> core::result::Result<(), alloc::string::String> {
        use alloc::format;
        let close = vocab.special.think_close;
        let eos = vocab.special.eos;
        let n = self.tokens.len();
        if self.origin.len() != n || self.sampled_logprobs.len() != n {
            return Err(format!("parallel arrays disagree on length {n}"));
        }
        if self.prompt_len == 0 || self.prompt_len > n {
            return Err(format!("bad prompt_len {}", self.prompt_len));
        }
        for (i, &o) in self.origin.iter().enumerate() {
            let should_be_prompt = i < self.prompt_len;
            if should_be_prompt != (o == Origin::Prompt) {
                return Err(format!("origin {o:?} at {i} vs prompt_len {}", self.prompt_len));
            }
            if (o == Origin::Sampled) != self.sampled_logprobs[i].is_some() && i >= self.prompt_len
            {
                return Err(format!("logprob presence disagrees with origin at {i}"));
            }
        }
        let te = self.think_end_position;
        if te < self.prompt_len || te >= n {
            return Err(format!("think_end_position {te} outside generated range"));
        }
        if self.tokens[te] != close {
            return Err(format!("token at think_end_position is {}", self.tokens[te]));
        }
        if !matches!(self.origin[te], Origin::Sampled | Origin::ForcedClose) {
            return Err(format!("close origin {:?}", self.origin[te]));
        }
        let thinking = &self.tokens[self.prompt_len..te];
        if thinking.contains(&close) {
            return Err("thinking interior contains the close marker".into());
        }
        if thinking.len() > cfg.b_max {
            return Err(format!("thinking length {} exceeds b_max {}", thinking.len(), cfg.b_max));
        }
        if self.origin[te] == Origin::ForcedClose && thinking.len() != cfg.b_max {
            return Err(format!(
                "forced close at thinking length {} != b_max {}",
                thinking.len(),
                cfg.b_max
            ));
        }
        let answer = &self.tokens[te + 1..];
        if answer.len() > cfg.answer_reserve {
            return Err(format!(
                "answer length {} exceeds reserve {}",
                answer.len(),
                cfg.answer_reserve
            ));
        }
        if self.generated_len() > cfg.b_max + 1 + cfg.answer_reserve {
            return Err(format!("generated length {} exceeds total budget", self.generated_len()));
        }
        match self.termination {
            Termination::AnswerEos => {
                if answer.last() != Some(&eos) {
                    return Err("AnswerEos without trailing <eos>".into());
                }
            }
            Termination::AnswerBudgetExhausted => {
                if answer.len() != cfg.answer_reserve {
                    return Err(format!(
                        "budget-exhausted answer has {} of {} tokens",
                        answer.len(),
                        cfg.answer_reserve
                    ));
                }
                if answer.last() == Some(&eos) {
                    return Err("budget-exhausted answer ends in <eos>".into());
                }
            }
        }
        if answer.iter().rev().skip(1).any(|&t| t == eos) {
            return Err("answer continues past <eos>".into());
        }
        if answer.iter().zip(&self.origin[te + 1..]).any(|(_, &o)| o != Origin::Sampled) {
            return Err("non-sampled token in answer phase".into());
        }
        if self.injection_positions.len() > cfg.c_max {
            return Err(format!(
                "{} injections exceed c_max {}",
                self.injection_positions.len(),
                cfg.c_max
            ));
        }
        let mut injected_spans = vec![false; n];
        let mut prev_end = self.prompt_len;
        for &p in &self.injection_positions {
            if p < prev_end {
                return Err(format!("injection at {p} overlaps or reorders"));
            }
            let end = p + cfg.injection.len();
            if end > te {
                return Err(format!("injection at {p} spills out of thinking phase"));
            }
            if self.tokens[p..end] != cfg.injection[..] {
                return Err(format!("injected tokens at {p} differ from configured injection"));
            }
            for slot in &mut injected_spans[p..end] {
                *slot = true;
            }
            prev_end = end;
        }
        for (i, &o) in self.origin.iter().enumerate() {
            if (o == Origin::Injected) != injected_spans[i] {
                return Err(format!("injected-origin mismatch at {i}"));
            }
        }
        Ok(())
    }
}

/// One draw from a decoding policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledToken {
    pub id: TokenId,
    /// Log-probability of the draw under the policy.
    pub logprob: f64,
}

/// Source of next-token draws. The budget forcer is generic over this so
/// tests can drive it with scripted emitters; [`ModelPolicy`] is the real
/// implementation.
pub trait TokenPolicy {
    /// Draws the next token given the accepted tokens so far. `context`
    /// grows by whatever the forcer accepted since the last call, which
    /// is not necessarily the token this policy returned.
    fn next(&mut self, context: &[TokenId]) -> Result<SampledToken>;
}

/// Samples from a model with a private key/value cache and random stream.
pub struct ModelPolicy<'m, R: Real> {
    model: &'m Model<R>,
    state: DecodeState<R>,
    rng: ChaCha8Rng,
    temperature: R,
    banned: Vec<TokenId>,
    excluded: Option<TokenId>,
    consumed: usize,
    last_logits: Option<Vec<R>>,
}

impl<'m, R: Real> ModelPolicy<'m, R> {
    pub fn new(model: &'m Model<R>, sampler: SamplerState, temperature: f64) -> Self {
        let banned: Vec<TokenId> = model.config.continuation.into_iter().collect();
        let excluded = if model.config.continue_in_normalizer {
            None
        } else {
            model.config.continuation
        };
        ModelPolicy {
            model,
            state: model.decode_state(),
            rng: sampler.rng(),
            temperature: R::from_f64(temperature),
            banned,
            excluded,
            consumed: 0,
            last_logits: None,
        }
    }
}

impl<R: Real> TokenPolicy for ModelPolicy<'_, R> {
    fn next(&mut self, context: &[TokenId]) -> Result<SampledToken> {
        for &tok in &context[self.consumed..] {
            self.last_logits = Some(self.model.decode_step(&mut self.state, tok)?);
        }
        self.consumed = context.len();
        let logits = self.last_logits.as_ref().ok_or(Error::MalformedPrompt)?;
        let id = sample_next(logits, self.temperature, &mut self.rng, &self.banned)?;
        let logprob = row_logprob(logits, self.temperature, id, self.excluded).to_f64();
        Ok(SampledToken { id, logprob })
    }
}

/// Scripted policy for tests: a function from context to token id.
pub struct Scripted<F>(pub F);

impl<F: FnMut(&[TokenId]) -> TokenId> TokenPolicy for Scripted<F> {
    fn next(&mut self, context: &[TokenId]) -> Result<SampledToken> {
        Ok(SampledToken {
            id: (self.0)(context),
            logprob: 0.0,
        })
    }
}

/// Runs the budget-forcing state machine over any policy.
pub fn bf_generate_with<P: TokenPolicy>(
    policy: &mut P,
    prompt: &[TokenId],
    cfg: &BFConfig,
    vocab: &Vocab,
) -> Result<GenerationTrace> {
    cfg.validate(vocab)?;
    check_prompt(prompt, vocab)?;
    let think_close = vocab.special.think_close;
    let eos = vocab.special.eos;

    let mut tokens = prompt.to_vec();
    let mut origin = vec![Origin::Prompt; prompt.len()];
    let mut logprobs: Vec<Option<f64>> = vec![None; prompt.len()];
    let mut injection_positions = Vec::new();
    let mut injections = 0usize;
    let mut thinking = 0usize;

    let think_end_position = loop {
        if thinking >= cfg.b_max {
            tokens.push(think_close);
            origin.push(Origin::ForcedClose);
            logprobs.push(None);
            break tokens.len() - 1;
        }
        let drawn = policy.next(&tokens)?;
        if drawn.id == think_close {
            let fits = cfg.injection.len() <= cfg.b_max - thinking;
            if injections < cfg.c_max && fits {
                // Replacement: the sampled close is discarded, the
                // injection takes its place and counts toward the budget.
                injections += 1;
                injection_positions.push(tokens.len());
                for &t in &cfg.injection {
                    tokens.push(t);
                    origin.push(Origin::Injected);
                    logprobs.push(None);
                }
                thinking += cfg.injection.len();
                continue;
            }
            tokens.push(think_close);
            origin.push(Origin::Sampled);
            logprobs.push(Some(drawn.logprob));
            break tokens.len() - 1;
        }
        tokens.push(drawn.id);
        origin.push(Origin::Sampled);
        logprobs.push(Some(drawn.logprob));
        thinking += 1;
    };

    let mut answered = 0usize;
    let termination = loop {
        if answered >= cfg.answer_reserve {
            break Termination::AnswerBudgetExhausted;
        }
        let drawn = policy.next(&tokens)?;
        tokens.push(drawn.id);
        origin.push(Origin::Sampled);
        logprobs.push(Some(drawn.logprob));
        answered += 1;
        if drawn.id == eos {
            break Termination::AnswerEos;
        }
    };

    Ok(GenerationTrace {
        prompt_len: prompt.len(),
        tokens,
        origin,
        injection_positions,
        think_end_position,
        termination,
        sampled_logprobs: logprobs,
    })
}

/// Budget-forced generation from a model.
pub fn bf_generate<R: Real>(
    model: &Model<R>,
    vocab: &Vocab,
    prompt: &[TokenId],
    cfg: &BFConfig,
    sampler: SamplerState,
) -> Result<GenerationTrace> {
    let needed = prompt.len() + cfg.b_max + 1 + cfg.answer_reserve;
    if needed > model.config.context_len {
        return Err(Error::ContextOverflow {
            len: needed,
            limit: model.config.context_len,
        });
    }
    let mut policy = ModelPolicy::new(model, sampler, cfg.temperature);
    bf_generate_with(&mut policy, prompt, cfg, vocab)
}

/// Generation without budget forcing: definitionally `bf_generate` with
/// `c_max = 0`.
pub fn plain_generate<R: Real>(
    model: &Model<R>,
    vocab: &Vocab,
    prompt: &[TokenId],
    b_max: usize,
    answer_reserve: usize,
    temperature: f64,
    sampler: SamplerState,
) -> Result<GenerationTrace> {
    let cfg = BFConfig {
        c_max: 0,
        b_max,
        answer_reserve,
        injection: Vec::new(),
        temperature,
    };
    bf_generate(model, vocab, prompt, &cfg, sampler)
}

/// The prompt must contain `<think>` with no `</think>` after its last
/// occurrence.
fn check_prompt(prompt: &[TokenId], vocab: &Vocab) -> Result<()> {
    let last_open = prompt
        .iter()
        .rposition(|&t| t == vocab.special.think_open)
        .ok_or(Error::MalformedPrompt)?;
    if prompt[last_open..].contains(&vocab.special.think_close)
    {
        return Err(Error::MalformedPrompt);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::Vocab;

    fn setup() -> (Vocab, Vec<TokenId>, TokenId, TokenId, TokenId) {
        let mut vocab = Vocab::core_alphabet();
        let cont = vocab.add_continuation().unwrap();
        let prompt = vocab.encode("<bos>Q: 1+1\n<think>").unwrap();
        let close = vocab.special.think_close;
        let eos = vocab.special.eos;
        (vocab, prompt, cont, close, eos)
    }

    fn cfg(c_max: usize, b_max: usize, reserve: usize, injection: Vec<TokenId>) -> BFConfig {
        BFConfig {
            c_max,
            b_max,
            answer_reserve: reserve,
            injection,
            temperature: 1.0,
        }
    }

    /// Emits a fixed generated-token script, indexed by how many tokens
    /// have been accepted beyond the prompt. Mirrors a deterministic
    /// model: the emission depends only on the context so far.
    fn script(prompt_len: usize, sequence: Vec<TokenId>, fallback: TokenId) -> Scripted<impl FnMut(&[TokenId]) -> TokenId> {
        Scripted(move |ctx: &[TokenId]| {
            let step = ctx.len() - prompt_len;
            sequence.get(step).copied().unwrap_or(fallback)
        })
    }

    #[test]
    fn sampled_close_is_replaced_once_then_kept() {
        let (vocab, prompt, cont, close, eos) = setup();
        let a = vocab.id_of("a").unwrap();
        let b = vocab.id_of("b").unwrap();
        // Script by accepted-context length: positions 0,1 think tokens,
        // then a close (intercepted -> injection at position 2), then after
        // the injection the script sees length 3 and emits b, close again
        // (kept), answer token, eos.
        let seq = vec![a, a, close, b, close, b, eos];
        let mut pol = script(prompt.len(), seq, eos);
        let trace =
            bf_generate_with(&mut pol, &prompt, &cfg(1, 16, 8, vec![cont]), &vocab).unwrap();
        let gen: Vec<(TokenId, Origin)> = trace.tokens[prompt.len()..]
            .iter()
            .copied()
            .zip(trace.origin[prompt.len()..].iter().copied())
            .collect();
        assert_eq!(
            gen,
            vec![
                (a, Origin::Sampled),
                (a, Origin::Sampled),
                (cont, Origin::Injected),
                (b, Origin::Sampled),
                (close, Origin::Sampled),
                (b, Origin::Sampled),
                (eos, Origin::Sampled),
            ]
        );
        assert_eq!(trace.injection_positions, vec![prompt.len() + 2]);
        assert_eq!(trace.think_end_position, prompt.len() + 4);
        assert_eq!(trace.termination, Termination::AnswerEos);
    }

    #[test]
    fn never_closing_script_is_truncated_at_budget() {
        let (vocab, prompt, cont, _close, eos) = setup();
        let a = vocab.id_of("a").unwrap();
        let mut pol = Scripted(|_: &[TokenId]| a);
        let trace =
            bf_generate_with(&mut pol, &prompt, &cfg(2, 12, 4, vec![cont]), &vocab).unwrap();
        let thinking: Vec<TokenId> =
            trace.tokens[prompt.len()..trace.think_end_position].to_vec();
        assert_eq!(thinking.len(), 12);
        assert!(thinking.iter().all(|&t| t == a));
        assert_eq!(trace.origin[trace.think_end_position], Origin::ForcedClose);
        assert_eq!(trace.termination, Termination::AnswerBudgetExhausted);
        assert_eq!(trace.generated_len(), 12 + 1 + 4);
        let _ = eos;
    }

    #[test]
    fn c_max_zero_never_injects() {
        let (vocab, prompt, cont, close, eos) = setup();
        let a = vocab.id_of("a").unwrap();
        let seq = vec![a, close, a, eos];
        let mut pol = script(prompt.len(), seq.clone(), eos);
        let bf = bf_generate_with(&mut pol, &prompt, &cfg(0, 16, 8, vec![cont]), &vocab).unwrap();
        assert!(bf.injection_positions.is_empty());
        assert!(bf.origin.iter().all(|&o| o != Origin::Injected));
        assert_eq!(bf.origin[bf.think_end_position], Origin::Sampled);
    }

    #[test]
    fn multi_token_injection_that_does_not_fit_keeps_the_close() {
        let (vocab, prompt, cont, close, eos) = setup();
        let a = vocab.id_of("a").unwrap();
        let tail = vocab.encode("xy").unwrap();
        let injection: Vec<TokenId> = [vec![cont], tail].concat();
        // Budget 4: after three thinking tokens only one slot remains, so
        // the three-token injection cannot fit and the close is kept.
        let seq = vec![a, a, a, close, a, eos];
        let mut pol = script(prompt.len(), seq, eos);
        let trace =
            bf_generate_with(&mut pol, &prompt, &cfg(3, 4, 4, injection), &vocab).unwrap();
        assert!(trace.injection_positions.is_empty());
        assert_eq!(trace.origin[trace.think_end_position], Origin::Sampled);
        assert_eq!(trace.think_end_position, prompt.len() + 3);
    }

    #[test]
    fn eos_during_thinking_is_an_ordinary_token() {
        let (vocab, prompt, cont, close, eos) = setup();
        let a = vocab.id_of("a").unwrap();
        let seq = vec![a, eos, a, close, a, eos];
        let mut pol = script(prompt.len(), seq, eos);
        let trace =
            bf_generate_with(&mut pol, &prompt, &cfg(0, 16, 8, vec![cont]), &vocab).unwrap();
        assert_eq!(trace.tokens[prompt.len() + 1], eos);
        assert_eq!(trace.think_end_position, prompt.len() + 3);
        assert_eq!(trace.termination, Termination::AnswerEos);
    }

    #[test]
    fn close_as_first_thinking_token_is_intercepted() {
        let (vocab, prompt, cont, close, eos) = setup();
        let a = vocab.id_of("a").unwrap();
        let seq = vec![close, a, close, a, eos];
        let mut pol = script(prompt.len(), seq, eos);
        let trace =
            bf_generate_with(&mut pol, &prompt, &cfg(1, 16, 8, vec![cont]), &vocab).unwrap();
        assert_eq!(trace.injection_positions, vec![prompt.len()]);
        assert_eq!(trace.tokens[prompt.len()], cont);
    }

    #[test]
    fn malformed_prompts_are_rejected() {
        let (vocab, _prompt, cont, _close, _eos) = setup();
        let missing = vocab.encode("<bos>Q: 1+1\n").unwrap();
        let closed = vocab.encode("<bos><think>x</think>").unwrap();
        let c = cfg(1, 8, 4, vec![cont]);
        let mut pol = Scripted(|_: &[TokenId]| 0);
        assert_eq!(
            bf_generate_with(&mut pol, &missing, &c, &vocab),
            Err(Error::MalformedPrompt)
        );
        assert_eq!(
            bf_generate_with(&mut pol, &closed, &c, &vocab),
            Err(Error::MalformedPrompt)
        );
    }

    #[test]
    fn injection_containing_close_or_eos_is_rejected() {
        let (vocab, prompt, _cont, close, eos) = setup();
        for bad in [close, eos] {
            let c = cfg(1, 8, 4, vec![bad]);
            let mut pol = Scripted(|_: &[TokenId]| 0);
            assert!(matches!(
                bf_generate_with(&mut pol, &prompt, &c, &vocab),
                Err(Error::InvalidConfig(_))
            ));
        }
    }

    /// Deterministic pseudo-random script: the emission is a pure function
    /// of the accepted context, so runs with different c_max share every
    /// pre-interception prefix.
    fn hashed_script(
        vocab: &Vocab,
        salt: u64,
    ) -> Scripted<impl FnMut(&[TokenId]) -> TokenId> {
        let close = vocab.special.think_close;
        let eos = vocab.special.eos;
        let a = vocab.id_of("a").unwrap();
        let b = vocab.id_of("b").unwrap();
        let c = vocab.id_of("c").unwrap();
        Scripted(move |ctx: &[TokenId]| {
            let mut h = salt;
            for &t in ctx {
                h = crate::rng::mix64(h ^ t as u64);
            }
            match h % 7 {
                0 | 1 => a,
                2 => b,
                3 | 4 => c,
                5 => close,
                _ => eos,
            }
        })
    }

    #[test]
    fn deeper_c_max_extends_the_shallower_trace() {
        let (vocab, prompt, cont, _close, _eos) = setup();
        for salt in 0..20 {
            let mut traces = Vec::new();
            for c_max in 0..=3usize {
                let mut pol = hashed_script(&vocab, salt);
                let trace = bf_generate_with(
                    &mut pol,
                    &prompt,
                    &cfg(c_max, 24, 6, vec![cont]),
                    &vocab,
                )
                .unwrap();
                traces.push(trace);
            }
            for k in 1..traces.len() {
                let (shallow, deep) = (&traces[k - 1], &traces[k]);
                // Up to the k-th interception point the deeper run must
                // reproduce the shallower run's pre-injection tokens.
                let bound = match deep.injection_positions.get(k - 1) {
                    Some(&p) => p,
                    None => {
                        // No k-th interception happened; the whole traces
                        // coincide.
                        assert_eq!(shallow.tokens, deep.tokens);
                        continue;
                    }
                };
                assert_eq!(shallow.tokens[..bound], deep.tokens[..bound]);
            }
        }
    }

    #[test]
    fn identical_inputs_give_identical_traces() {
        let (vocab, prompt, cont, _close, _eos) = setup();
        for salt in 0..10 {
            let mut p1 = hashed_script(&vocab, salt);
            let mut p2 = hashed_script(&vocab, salt);
            let c = cfg(2, 24, 6, vec![cont]);
            let t1 = bf_generate_with(&mut p1, &prompt, &c, &vocab).unwrap();
            let t2 = bf_generate_with(&mut p2, &prompt, &c, &vocab).unwrap();
            assert_eq!(t1, t2);
        }
    }

    #[test]
    fn scripted_runs_satisfy_all_invariants() {
        let (vocab, prompt, cont, _close, _eos) = setup();
        let tail = vocab.encode("no").unwrap();
        for salt in 0..100 {
            let injection = if salt % 2 == 0 {
                vec![cont]
            } else {
                [vec![cont], tail.clone()].concat()
            };
            let c = cfg((salt % 4) as usize, 8 + (salt % 17) as usize, 1 + (salt % 5) as usize, injection);
            let mut pol = hashed_script(&vocab, salt);
            let trace = bf_generate_with(&mut pol, &prompt, &c, &vocab).unwrap();
            trace.verify_invariants(&c, &vocab).unwrap();
        }
    }

    #[test]
    fn model_c_max_zero_equals_plain_generation() {
        let (vocab, model) = crate::testutil::small_model(11);
        let prompt = crate::testutil::think_prompt(&vocab);
        let cont = vocab.special.continuation.unwrap();
        for seed in 0..5u64 {
            let sampler = SamplerState::new(seed, 77);
            let forced = bf_generate(
                &model,
                &vocab,
                &prompt,
                &cfg(0, 24, 8, vec![cont]),
                sampler,
            )
            .unwrap();
            let plain =
                plain_generate(&model, &vocab, &prompt, 24, 8, 1.0, sampler).unwrap();
            assert_eq!(forced.tokens, plain.tokens);
            assert_eq!(forced.origin, plain.origin);
            assert_eq!(forced.sampled_logprobs, plain.sampled_logprobs);
            assert_eq!(forced.termination, plain.termination);
        }
    }

    #[test]
    fn model_runs_satisfy_invariants_and_never_emit_continuation_unforced() {
        let (vocab, model) = crate::testutil::small_model(4);
        let prompt = crate::testutil::think_prompt(&vocab);
        let cont = vocab.special.continuation.unwrap();
        for seed in 0..8u64 {
            let c = cfg(2, 20, 6, vec![cont]);
            let trace = bf_generate(&model, &vocab, &prompt, &c, SamplerState::new(9, seed))
                .unwrap();
            trace.verify_invariants(&c, &vocab).unwrap();
            for (i, &t) in trace.tokens.iter().enumerate() {
                if t == cont {
                    assert_eq!(trace.origin[i], Origin::Injected);
                }
            }
        }
    }

    #[test]
    fn model_generation_rejects_budgets_beyond_context() {
        let (vocab, model) = crate::testutil::small_model(2);
        let prompt = crate::testutil::think_prompt(&vocab);
        let cont = vocab.special.continuation.unwrap();
        let err = bf_generate(
            &model,
            &vocab,
            &prompt,
            &cfg(1, 400, 100, vec![cont]),
            SamplerState::new(0, 0),
        );
        assert!(matches!(err, Err(Error::ContextOverflow { .. })));
    }
}
