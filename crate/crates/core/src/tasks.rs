//! Synthetic modular-arithmetic tasks and the pretraining corpus.
//!
//! Questions are left-folded chains such as `(((7+3)*2)-5) mod 20`, built
//! from a single-digit start value and single-digit operands. The worked
//! solution reduces modulo 20 after every step, which agrees with reducing
//! the whole expression once at the end.
//!
//! The corpus teaches self-correction through redo cues. A configurable
//! fraction of examples plants one wrong step, propagates it consistently
//! to the end of the first pass, then emits a cue marker, a fixed
//! correction phrase, and a correct redo. Each cue has its own redo depth:
//! `<wait>` and `<alt>` redo the last step, `<hmm>` the last two, and
//! `<critique>` the whole chain. The planted error always falls inside the
//! cue's redo window, so the redo ends on the true answer.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::RangeInclusive;

use rand::Rng;

use crate::rng::{stream_id, SamplerState};

/// Default instruction prefix for every prompt.
pub const SYSTEM_PROMPT: &str = "You are a helpful AI Assistant. First, think through the reasoning inside <think>...</think>. Then, always present the final answer in \\boxed{}";

/// Phrase emitted after every redo cue, in the corpus and in multi-token
/// injections.
pub const CORRECTION_PHRASE: &str = "no, let me try that again. ";

/// Modulus applied after every step.
pub const MODULUS: i64 = 20;

/// One verifiable question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskRecord {
    pub id: String,
    pub question: String,
    /// Canonical decimal answer in `0..MODULUS`.
    pub answer: String,
    /// Number of operations in the chain.
    pub difficulty: usize,
}

/// Redo cues available to the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cue {
    Wait,
    Alt,
    Hmm,
    Critique,
}

impl Cue {
    pub const ALL: [Cue; 4] = [Cue::Wait, Cue::Alt, Cue::Hmm, Cue::Critique];

    /// The marker token text for this cue.
    pub fn marker(self) -> &'static str {
        match self {
            Cue::Wait => "<wait>",
            Cue::Alt => "<alt>",
            Cue::Hmm => "<hmm>",
            Cue::Critique => "<critique>",
        }
    }

    /// How many trailing steps the cue redoes; `usize::MAX` means the
    /// whole chain.
    pub fn redo_depth(self) -> usize {
        match self {
            Cue::Wait | Cue::Alt => 1,
            Cue::Hmm => 2,
            Cue::Critique => usize::MAX,
        }
    }
}

/// One pretraining sequence with its provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusExample {
    /// Full encodable sequence text, `<bos>` through `<eos>`.
    pub text: String,
    pub task: TaskRecord,
    /// The redo cue used, if this example practices self-correction.
    pub cue: Option<Cue>,
}

#[derive(Debug, Clone, Copy)]
struct Step {
    lhs: i64,
    op: char,
    rhs: i64,
    result: i64,
}

fn apply(lhs: i64, op: char, rhs: i64) -> i64 {
    let raw = match op {
        '+' => lhs + rhs,
        '-' => lhs - rhs,
        '*' => lhs * rhs,
        _ => unreachable!(),
    };
    raw.rem_euclid(MODULUS)
}

/// Draws one operation chain: start value, operators, operands.
fn draw_chain(rng: &mut impl Rng, n_ops: usize) -> (i64, Vec<Step>) {
    const OPS: [char; 3] = ['+', '-', '*'];
    let start = rng.random_range(1..=9i64);
    let mut value = start;
    let mut steps = Vec::with_capacity(n_ops);
    for _ in 0..n_ops {
        let op = OPS[rng.random_range(0..OPS.len())];
        let rhs = rng.random_range(1..=9i64);
        let result = apply(value, op, rhs);
        steps.push(Step { lhs: value, op, rhs, result });
        value = result;
    }
    (start, steps)
}

fn question_text(start: i64, steps: &[Step]) -> String {
    let mut expr = start.to_string();
    for s in steps {
        expr = format!("({expr}{}{})", s.op, s.rhs);
    }
    format!("{expr} mod {MODULUS}")
}

fn steps_text(steps: &[Step]) -> String {
    let mut out = String::new();
    for s in steps {
        out.push_str(&format!("{}{}{}={}. ", s.lhs, s.op, s.rhs, s.result));
    }
    out
}

fn record_id(seed: u64, index: u64) -> String {
    format!("t-{:016x}", stream_id("task-id", &[seed, index]))
}

/// Generates `n` tasks. Record `i` depends only on `(seed, i)`, so a
/// longer run extends a shorter one.
pub fn gen_dataset(seed: u64, n: usize, difficulty: RangeInclusive<usize>) -> Vec<TaskRecord> {
    assert!(*difficulty.start() >= 1, "chains need at least one operation");
    (0..n)
        .map(|i| {
            let mut rng = SamplerState::new(seed, stream_id("task", &[i as u64])).rng();
            let n_ops = rng.random_range(difficulty.clone());
            let (start, steps) = draw_chain(&mut rng, n_ops);
            TaskRecord {
                id: record_id(seed, i as u64),
                question: question_text(start, &steps),
                answer: steps.last().map(|s| s.result).unwrap_or(start).to_string(),
                difficulty: n_ops,
            }
        })
        .collect()
}

/// Renders the generation prompt for a question, ending inside thinking.
pub fn render_prompt(system_prompt: &str, question: &str) -> String {
    format!("<bos>{system_prompt}\nQ: {question}\n<think>")
}

/// Renders the post-thinking answer text (without `<eos>`).
pub fn answer_text(answer: &str) -> String {
    format!("The answer is \\boxed{{{answer}}}.")
}

/// Generates `n` full training sequences; a `self_correction_fraction` of
/// them practice cue-triggered redo. Example `i` depends only on
/// `(seed, i, fraction)`.
pub fn gen_pretrain_corpus(
    seed: u64,
    n: usize,
    self_correction_fraction: f64,
    difficulty: RangeInclusive<usize>,
) -> Vec<CorpusExample> {
    assert!((0.0..=1.0).contains(&self_correction_fraction));
    (0..n)
        .map(|i| {
            let mut rng = SamplerState::new(seed, stream_id("corpus", &[i as u64])).rng();
            let n_ops = rng.random_range(difficulty.clone());
            let (start, steps) = draw_chain(&mut rng, n_ops);
            let task = TaskRecord {
                id: record_id(seed ^ 0x636f72, i as u64),
                question: question_text(start, &steps),
                answer: steps.last().map(|s| s.result).unwrap_or(start).to_string(),
                difficulty: n_ops,
            };
            let corrected = rng.random::<f64>() < self_correction_fraction;
            let (think, cue) = if corrected {
                let cue = Cue::ALL[rng.random_range(0..Cue::ALL.len())];
                (corrected_think(&mut rng, &steps, cue), Some(cue))
            } else {
                (steps_text(&steps), None)
            };
            let text = format!(
                "<bos>{SYSTEM_PROMPT}\nQ: {}\n<think>{think}</think>{}<eos>",
                task.question,
                answer_text(&task.answer)
            );
            CorpusExample { text, task, cue }
        })
        .collect()
}

/// Builds a thinking passage with one planted error, a cue, and a redo.
fn corrected_think(rng: &mut impl Rng, steps: &[Step], cue: Cue) -> String {
    let n = steps.len();
    let depth = cue.redo_depth().min(n);
    let redo_from = n - depth;
    // The error lands inside the redo window so the redo repairs it.
    let err_idx = rng.random_range(redo_from..n);
    let delta = rng.random_range(1..=5i64);

    let mut first_pass = steps.to_vec();
    first_pass[err_idx].result = (first_pass[err_idx].result + delta).rem_euclid(MODULUS);
    let mut value = first_pass[err_idx].result;
    for s in &mut first_pass[err_idx + 1..] {
        s.lhs = value;
        s.result = apply(s.lhs, s.op, s.rhs);
        value = s.result;
    }

    format!(
        "{}{}{CORRECTION_PHRASE}{}",
        steps_text(&first_pass),
        cue.marker(),
        steps_text(&steps[redo_from..])
    )
}

/// Compares a claimed answer against the reference, tolerating surrounding
/// whitespace, an explicit sign, and leading zeros.
pub fn verify(claimed: &str, reference: &str) -> bool {
    match (canonical_int(claimed), canonical_int(reference)) {
        (Some(a), Some(b)) => a == b,
        _ => claimed.trim() == reference.trim(),
    }
}

/// Canonicalizes a decimal integer string, or `None` if it is not one.
fn canonical_int(s: &str) -> Option<String> {
    let t = s.trim();
    let (neg, digits) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let stripped = digits.trim_start_matches('0');
    let magnitude = if stripped.is_empty() { "0" } else { stripped };
    if neg && magnitude != "0" {
        Some(format!("-{magnitude}"))
    } else {
        Some(magnitude.to_string())
    }
}
