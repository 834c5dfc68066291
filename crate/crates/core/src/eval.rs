//! Evaluation: boxed-answer extraction, hybrid verification, pass@1 with
//! clustered standard errors, and trace analyses.
//!
//! Verification is hybrid: when the solution carries a well-formed
//! `\boxed{...}`, its content is compared exactly against the reference
//! and that verdict is final. Only box-less solutions fall back to a
//! judge. A failed judge call counts the sample incorrect and is flagged
//! in the summary rather than aborting the run.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::bfdecode::{bf_generate, BFConfig, GenerationTrace, Origin};
use crate::exec::Executor;
use crate::model::Model;
use crate::rng::{stream_id, SamplerState};
use crate::tasks::{render_prompt, verify, TaskRecord};
use crate::vocab::{TokenId, Vocab};
use crate::{Error, Real, Result};

/// Chat prompt sent to a remote judge, with `%(question)s`,
/// `%(correct_answer)s`, and `%(student_solution)s` placeholders.
pub const JUDGE_PROMPT_TEMPLATE: &str = "Given a math question, a correct answer, and a student's final answer (which may include explanations), determine if the correct answer appears in some form within the student's answer (ignoring trivial differences like formatting or wording). Output True if the student's answer is correct, otherwise output False. Output nothing else.\n\nSTART-OF-QUESTION\n\nquestion: %(question)s\n\nEND-OF-QUESTION\n\ncorrect answer: %(correct_answer)s\n\nstudent's solution:\n\nSTART-OF-STUDENT-SOLUTION\n\n%(student_solution)s\n\nEND-OF-STUDENT-SOLUTION\n\nOutput True if the student's solution equivalent the correct answer and False otherwise.";

/// Fills the judge prompt template.
pub fn render_judge_prompt(question: &str, correct_answer: &str, student_solution: &str) -> String {
    JUDGE_PROMPT_TEMPLATE
        .replace("%(question)s", question)
        .replace("%(correct_answer)s", correct_answer)
        .replace("%(student_solution)s", student_solution)
}

/// Extracts the content of the last `\boxed{...}` whose braces balance.
pub fn extract_boxed(text: &str) -> Option<String> {
    const NEEDLE: &str = "\\boxed{";
    let bytes = text.as_bytes();
    let mut search_end = text.len();
    while let Some(pos) = text[..search_end].rfind(NEEDLE) {
        let start = pos + NEEDLE.len();
        let mut depth = 1usize;
        let mut i = start;
        while i < bytes.len() {
            match bytes[i] {
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(text[start..i].to_owned());
                    }
                }
                _ => {}
            }
            i += 1;
        }
        search_end = pos;
    }
    None
}

/// Verdict source for solutions without a parseable boxed answer.
pub trait Judge: Sync {
    fn judge(&self, question: &str, correct_answer: &str, student_solution: &str) -> Result<bool>;
}

/// Deterministic local judge: the last integer in the solution must match
/// the reference.
pub struct OracleJudge;

impl Judge for OracleJudge {
    fn judge(&self, _question: &str, correct_answer: &str, student_solution: &str) -> Result<bool> {
        Ok(match last_integer(student_solution) {
            Some(found) => verify(found, correct_answer),
            None => false,
        })
    }
}

/// The last maximal digit run in the text.
fn last_integer(text: &str) -> Option<&str> {
    let b = text.as_bytes();
    let mut end = b.len();
    while end > 0 && !b[end - 1].is_ascii_digit() {
        end -= 1;
    }
    if end == 0 {
        return None;
    }
    let mut start = end;
    while start > 0 && b[start - 1].is_ascii_digit() {
        start -= 1;
    }
    Some(&text[start..end])
}

/// Outcome of verifying one solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOutcome {
    pub correct: bool,
    /// A balanced boxed answer was present.
    pub format_ok: bool,
    /// Correct judged by extraction and exact match alone.
    pub regex_correct: bool,
    pub judge_used: bool,
    /// The judge was needed but returned an error.
    pub judge_failed: bool,
}

/// Verifies one solution: exact match on an extracted boxed answer when
/// present, judge verdict otherwise.
pub fn hybrid_verify(
    question: &str,
    reference: &str,
    solution_text: &str,
    judge: &dyn Judge,
) -> VerifyOutcome {
    match extract_boxed(solution_text) {
        Some(content) => {
            let correct = verify(&content, reference);
            VerifyOutcome {
                correct,
                format_ok: true,
                regex_correct: correct,
                judge_used: false,
                judge_failed: false,
            }
        }
        None => match judge.judge(question, reference, solution_text) {
            Ok(correct) => VerifyOutcome {
                correct,
                format_ok: false,
                regex_correct: false,
                judge_used: true,
                judge_failed: false,
            },
            Err(_) => VerifyOutcome {
                correct: false,
                format_ok: false,
                regex_correct: false,
                judge_used: true,
                judge_failed: true,
            },
        },
    }
}

/// One decoding method to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub name: String,
    pub c_max: usize,
    pub injection: Vec<TokenId>,
    /// Thinking budget override; `None` uses the run-wide budget.
    pub b_max: Option<usize>,
}

/// Run-wide evaluation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub b_max: usize,
    pub answer_reserve: usize,
    pub temperature: f64,
    /// Samples per question.
    pub k: usize,
    pub seed: u64,
    pub system_prompt: String,
}

/// One evaluated sample with its full generation.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveRecord {
    pub question_id: String,
    pub sample_idx: usize,
    pub method: String,
    pub correct: bool,
    pub judge_used: bool,
    pub judge_failed: bool,
    pub c_max: usize,
    pub b_max: usize,
    pub trace: GenerationTrace,
}

/// Aggregates for one method row.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub c_max: usize,
    pub b_max: usize,
    pub pass1: f64,
    /// Standard error of pass@1, clustered by question.
    pub stderr: f64,
    pub format_rate: f64,
    pub avg_tokens: f64,
    /// Pass@1 under extraction-and-exact-match alone.
    pub regex_pass1: f64,
    pub judge_calls: usize,
    pub judge_failures: usize,
}

/// Random stream for one (question, sample) cell. Methods share streams
/// on purpose: at `c_max = 0` every method then reproduces the same
/// generations, and results do not depend on question order.
fn sample_stream(question_id: &str, sample_idx: usize) -> u64 {
    stream_id(question_id, &[sample_idx as u64])
}

/// Evaluates every method over every question with `k` samples each.
/// Returns one summary per method and the full archive in stable
/// `(method, question, sample)` order.
pub fn run_eval<R: Real, E: Executor>(
    model: &Model<R>,
    vocab: &Vocab,
    tasks: &[TaskRecord],
    methods: &[MethodSpec],
    cfg: &EvalConfig,
    judge: &dyn Judge,
    exec: &E,
) -> Result<(Vec<MethodSummary>, Vec<ArchiveRecord>)> {
    if tasks.is_empty() || methods.is_empty() || cfg.k == 0 {
        return Err(Error::InvalidConfig("evaluation needs tasks, methods, and k > 0"));
    }
    for (i, m) in methods.iter().enumerate() {
        if methods[..i].iter().any(|other| other.name == m.name) {
            return Err(Error::InvalidConfig("method names must be unique"));
        }
    }

    let n_cells = methods.len() * tasks.len() * cfg.k;
    let records: Result<Vec<ArchiveRecord>> = exec
        .map_indexed(n_cells, |idx| -> Result<ArchiveRecord> {
            let mi = idx / (tasks.len() * cfg.k);
            let qi = (idx / cfg.k) % tasks.len();
            let si = idx % cfg.k;
            let method = &methods[mi];
            let task = &tasks[qi];
            let b_max = method.b_max.unwrap_or(cfg.b_max);
            let bf = BFConfig {
                c_max: method.c_max,
                b_max,
                answer_reserve: cfg.answer_reserve,
                injection: method.injection.clone(),
                temperature: cfg.temperature,
            };
            let prompt = vocab.encode(&render_prompt(&cfg.system_prompt, &task.question))?;
            let sampler = SamplerState::new(cfg.seed, sample_stream(&task.id, si));
            let trace = bf_generate(model, vocab, &prompt, &bf, sampler)?;
            let solution = vocab.decode(&strip_eos(trace.generated(), vocab))?;
            let outcome = hybrid_verify(&task.question, &task.answer, &solution, judge);
            Ok(ArchiveRecord {
                question_id: task.id.clone(),
                sample_idx: si,
                method: method.name.clone(),
                correct: outcome.correct,
                judge_used: outcome.judge_used,
                judge_failed: outcome.judge_failed,
                c_max: method.c_max,
                b_max,
                trace,
            })
        })
        .into_iter()
        .collect();
    let records = records?;

    let per_method = tasks.len() * cfg.k;
    let summaries = methods
        .iter()
        .enumerate()
        .map(|(mi, method)| {
            let rows = &records[mi * per_method..(mi + 1) * per_method];
            summarize(method, rows, tasks.len(), cfg.k)
        })
        .collect();
    Ok((summaries, records))
}

pub(crate) fn strip_eos(tokens: &[TokenId], vocab: &Vocab) -> Vec<TokenId> {
    let mut out = tokens.to_vec();
    if out.last() == Some(&vocab.special.eos) {
        out.pop();
    }
    out
}

impl GenerationTrace {
    /// The generated (non-prompt) tokens.
    pub fn generated(&self) -> &[TokenId] {
        &self.tokens[self.prompt_len..]
    }
}

fn summarize(method: &MethodSpec, rows: &[ArchiveRecord], n_questions: usize, k: usize) -> MethodSummary {
    let n = rows.len() as f64;
    let pass1 = rows.iter().filter(|r| r.correct).count() as f64 / n;
    let regex_pass1 = rows
        .iter()
        .filter(|r| r.correct && !r.judge_used)
        .count() as f64
        / n;
    let format_rate = rows.iter().filter(|r| !r.judge_used).count() as f64 / n;
    let avg_tokens =
        rows.iter().map(|r| r.trace.generated_len() as f64).sum::<f64>() / n;
    let judge_calls = rows.iter().filter(|r| r.judge_used).count();
    let judge_failures = rows.iter().filter(|r| r.judge_failed).count();

    // Cluster by question: variance of per-question accuracies over Q.
    let accs: Vec<f64> = (0..n_questions)
        .map(|q| {
            let qrows = &rows[q * k..(q + 1) * k];
            qrows.iter().filter(|r| r.correct).count() as f64 / k as f64
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let stderr = if accs.len() < 2 {
        0.0
    } else {
        let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
            / (accs.len() - 1) as f64;
        libm::sqrt(var / accs.len() as f64)
    };

    MethodSummary {
        method: method.name.clone(),
        c_max: method.c_max,
        b_max: rows.first().map(|r| r.b_max).unwrap_or(0),
        pass1,
        stderr,
        format_rate,
        avg_tokens,
        regex_pass1,
        judge_calls,
        judge_failures,
    }
}

/// Joint outcome probabilities for two methods over the same questions,
/// treating the k samples per question as independent draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedProbabilities {
    /// P(first correct, second wrong).
    pub p_first_only: f64,
    /// P(second correct, first wrong).
    pub p_second_only: f64,
    pub pass1_first: f64,
    pub pass1_second: f64,
}

/// Computes paired win/loss probabilities between two archived methods.
/// Both must cover exactly the same question set.
pub fn paired_probabilities(
    records: &[ArchiveRecord],
    method_first: &str,
    method_second: &str,
) -> Result<PairedProbabilities> {
    let acc_by_question = |name: &str| -> BTreeMap<&str, (usize, usize)> {
        let mut map: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for r in records.iter().filter(|r| r.method == name) {
            let e = map.entry(r.question_id.as_str()).or_insert((0, 0));
            e.0 += r.correct as usize;
            e.1 += 1;
        }
        map
    };
    let first = acc_by_question(method_first);
    let second = acc_by_question(method_second);
    if first.is_empty()
        || !first.keys().eq(second.keys())
    {
        return Err(Error::QuestionSetMismatch);
    }
    let q = first.len() as f64;
    let mut p_first_only = 0.0;
    let mut p_second_only = 0.0;
    let mut pass1_first = 0.0;
    let mut pass1_second = 0.0;
    for (id, &(ca, na)) in &first {
        let (cb, nb) = second[id];
        let pa = ca as f64 / na as f64;
        let pb = cb as f64 / nb as f64;
        p_first_only += pa * (1.0 - pb);
        p_second_only += pb * (1.0 - pa);
        pass1_first += pa;
        pass1_second += pb;
    }
    Ok(PairedProbabilities {
        p_first_only: p_first_only / q,
        p_second_only: p_second_only / q,
        pass1_first: pass1_first / q,
        pass1_second: pass1_second / q,
    })
}

/// Histogram of generated lengths with fixed-width buckets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub bucket_width: usize,
    /// Bucket `i` counts lengths in `[i*width, (i+1)*width)`.
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Buckets the generated length of each record.
pub fn length_histogram<'a>(
    records: impl IntoIterator<Item = &'a ArchiveRecord>,
    bucket_width: usize,
) -> Histogram {
    assert!(bucket_width > 0);
    let mut counts = Vec::new();
    for r in records {
        let bucket = r.trace.generated_len() / bucket_width;
        if counts.len() <= bucket {
            counts.resize(bucket + 1, 0);
        }
        counts[bucket] += 1;
    }
    Histogram { bucket_width, counts }
}

/// Frequencies of the first policy-sampled token after each injection.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FirstTokenStats {
    pub counts: BTreeMap<TokenId, usize>,
    pub injection_groups: usize,
}

/// Tallies what the model does right after each injected continuation.
pub fn first_token_stats<'a>(
    records: impl IntoIterator<Item = &'a ArchiveRecord>,
) -> FirstTokenStats {
    let mut stats = FirstTokenStats::default();
    for r in records {
        for &p in &r.trace.injection_positions {
            stats.injection_groups += 1;
            let next_sampled = (p..r.trace.tokens.len())
                .find(|&i| r.trace.origin[i] == Origin::Sampled);
            if let Some(i) = next_sampled {
                *stats.counts.entry(r.trace.tokens[i]).or_insert(0) += 1;
            }
        }
    }
    stats
}

/// One point on the thinking-tokens-versus-accuracy curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub method: String,
    pub c_max: usize,
    pub b_max: usize,
    pub avg_tokens: f64,
    pub pass1: f64,
}

/// Groups the archive by (method, c_max, b_max) in first-appearance order
/// and reports each group's average generated length and accuracy.
pub fn tokens_vs_accuracy(records: &[ArchiveRecord]) -> Vec<CurvePoint> {
    let mut order: Vec<(String, usize, usize)> = Vec::new();
    let mut acc: BTreeMap<(String, usize, usize), (usize, usize, usize)> = BTreeMap::new();
    for r in records {
        let key = (r.method.clone(), r.c_max, r.b_max);
        if !acc.contains_key(&key) {
            order.push(key.clone());
        }
        let e = acc.entry(key).or_insert((0, 0, 0));
        e.0 += r.trace.generated_len();
        e.1 += r.correct as usize;
        e.2 += 1;
    }
    order
        .into_iter()
        .map(|key| {
            let (tokens, correct, n) = acc[&key];
            CurvePoint {
                method: key.0,
                c_max: key.1,
                b_max: key.2,
                avg_tokens: tokens as f64 / n as f64,
                pass1: correct as f64 / n as f64,
            }
        })
        .collect()
}

/// Conformance cases for [`extract_boxed`]: 50 texts with the expected
/// extraction result.
pub fn extraction_fixture() -> Vec<(String, Option<String>)> {
    let some = |s: &str| Some(s.to_string());
    let mut cases: Vec<(String, Option<String>)> = [
        ("", None),
        ("no box here", None),
        ("\\boxed{7}", some("7")),
        ("The answer is \\boxed{42}.", some("42")),
        ("\\boxed{1} then \\boxed{2}", some("2")),
        ("\\boxed{\\frac{1}{2}}", some("\\frac{1}{2}")),
        ("\\boxed{{a}{b}}", some("{a}{b}")),
        ("\\boxed{unclosed", None),
        ("\\boxed{ok} and \\boxed{bad", some("ok")),
        ("\\boxed{}", some("")),
        ("prefix \\boxed{x}suffix", some("x")),
        ("\\boxed {7}", None),
        ("\\boxed{a\nb}", some("a\nb")),
        ("\\Boxed{7}", None),
        ("\\boxed{15} trailing", some("15")),
        ("deep \\boxed{a{b{c}d}e}", some("a{b{c}d}e")),
        ("\\boxed\\boxed{3}", some("3")),
        ("\\boxed{\\boxed{3}}", some("3")),
        ("answer \\boxed{0019}", some("0019")),
        ("\\boxed{-4}", some("-4")),
        ("\\boxed{x} \\boxed{}", some("")),
        ("}{ \\boxed{5}", some("5")),
        ("\\boxed{5} }", some("5")),
        ("text} \\boxed{12} {text", some("12")),
        ("\\boxed{ 7 }", some(" 7 ")),
        ("boxed{7}", None),
        ("\\boxed{7", None),
        ("\\boxed{a{b}", None),
        ("\\boxed{a{b} \\boxed{c}", some("c")),
        ("first \\boxed{1}\nsecond \\boxed{2}\nthird \\boxed{3}", some("3")),
        ("\\boxed{19}.", some("19")),
        ("The answer is \\boxed{0}.", some("0")),
    ]
    .into_iter()
    .map(|(t, e)| (t.to_string(), e))
    .collect();
    for i in 0..18 {
        cases.push((
            alloc::format!("step {i}. The answer is \\boxed{{{i}}}.<eos>"),
            some(&i.to_string()),
        ));
    }
    cases
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Serial;
    use crate::tasks::gen_dataset;

    #[test]
    fn extraction_fixture_is_fully_matched() {
        let cases = extraction_fixture();
        assert_eq!(cases.len(), 50);
        for (text, expected) in &cases {
            assert_eq!(&extract_boxed(text), expected, "text {text:?}");
        }
    }

    #[test]
    fn oracle_judge_matches_last_integer() {
        let j = OracleJudge;
        assert!(j.judge("q", "15", "so we get 15").unwrap());
        assert!(j.judge("q", "15", "the answer is 15.").unwrap());
        assert!(j.judge("q", "15", "maybe 12, no: 015").unwrap());
        assert!(!j.judge("q", "15", "15 or rather 16").unwrap());
        assert!(!j.judge("q", "15", "no digits at all").unwrap());
        assert!(!j.judge("q", "15", "").unwrap());
    }

    struct Always(bool);
    impl Judge for Always {
        fn judge(&self, _q: &str, _c: &str, _s: &str) -> crate::Result<bool> {
            Ok(self.0)
        }
    }

    struct Failing;
    impl Judge for Failing {
        fn judge(&self, _q: &str, _c: &str, _s: &str) -> crate::Result<bool> {
            Err(Error::JudgeUnavailable)
        }
    }

    /// Judge that panics if consulted.
    struct Untouchable;
    impl Judge for Untouchable {
        fn judge(&self, _q: &str, _c: &str, _s: &str) -> crate::Result<bool> {
            panic!("judge must not be consulted when extraction succeeds");
        }
    }

    #[test]
    fn hybrid_prefers_extraction_and_never_consults_judge_on_success() {
        let hit = hybrid_verify("q", "294", "x \\boxed{294}", &Untouchable);
        assert!(hit.correct && hit.format_ok && hit.regex_correct && !hit.judge_used);
        let miss = hybrid_verify("q", "294", "x \\boxed{295}", &Untouchable);
        assert!(!miss.correct && miss.format_ok && !miss.regex_correct && !miss.judge_used);
    }

    #[test]
    fn hybrid_falls_back_to_judge_without_a_box() {
        let yes = hybrid_verify("q", "7", "it is 7", &Always(true));
        assert!(yes.correct && yes.judge_used && !yes.format_ok && !yes.regex_correct);
        let no = hybrid_verify("q", "7", "it is 7", &Always(false));
        assert!(!no.correct && no.judge_used);
        let failed = hybrid_verify("q", "7", "it is 7", &Failing);
        assert!(!failed.correct && failed.judge_used && failed.judge_failed);
    }

    #[test]
    fn judge_prompt_substitutes_all_placeholders() {
        let p = render_judge_prompt("Q1", "42", "S1");
        assert!(p.contains("question: Q1"));
        assert!(p.contains("correct answer: 42"));
        assert!(p.contains("START-OF-STUDENT-SOLUTION\n\nS1\n\nEND-OF-STUDENT-SOLUTION"));
        assert!(!p.contains("%("));
    }

    fn eval_setup() -> (Vocab, Model<f32>, Vec<TaskRecord>, EvalConfig) {
        let (vocab, model) = crate::testutil::small_model(20);
        let tasks = gen_dataset(33, 3, 1..=1);
        let cfg = EvalConfig {
            b_max: 20,
            answer_reserve: 8,
            temperature: 0.9,
            k: 2,
            seed: 5,
            system_prompt: "Solve.".to_string(),
        };
        (vocab, model, tasks, cfg)
    }

    fn methods(vocab: &Vocab) -> Vec<MethodSpec> {
        let cont = vocab.special.continuation.unwrap();
        vec![
            MethodSpec {
                name: "plain".to_string(),
                c_max: 0,
                injection: vec![],
                b_max: None,
            },
            MethodSpec {
                name: "forced".to_string(),
                c_max: 1,
                injection: vec![cont],
                b_max: None,
            },
        ]
    }

    #[test]
    fn run_eval_is_deterministic_with_stable_archive_order() {
        let (vocab, model, tasks, cfg) = eval_setup();
        let ms = methods(&vocab);
        let (s1, a1) =
            run_eval(&model, &vocab, &tasks, &ms, &cfg, &OracleJudge, &Serial).unwrap();
        let (s2, a2) =
            run_eval(&model, &vocab, &tasks, &ms, &cfg, &OracleJudge, &Serial).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(a1, a2);
        assert_eq!(a1.len(), ms.len() * tasks.len() * cfg.k);
        let expected_order: Vec<(String, String, usize)> = ms
            .iter()
            .flat_map(|m| {
                tasks.iter().flat_map(move |t| {
                    (0..cfg.k).map(move |s| (m.name.clone(), t.id.clone(), s))
                })
            })
            .collect();
        let actual: Vec<(String, String, usize)> = a1
            .iter()
            .map(|r| (r.method.clone(), r.question_id.clone(), r.sample_idx))
            .collect();
        assert_eq!(actual, expected_order);
    }

    #[test]
    fn methods_with_zero_c_max_share_generations() {
        let (vocab, model, tasks, cfg) = eval_setup();
        let cont = vocab.special.continuation.unwrap();
        let ms = vec![
            MethodSpec {
                name: "plain-a".to_string(),
                c_max: 0,
                injection: vec![],
                b_max: None,
            },
            MethodSpec {
                name: "plain-b".to_string(),
                c_max: 0,
                injection: vec![cont],
                b_max: None,
            },
        ];
        let (s, a) = run_eval(&model, &vocab, &tasks, &ms, &cfg, &OracleJudge, &Serial).unwrap();
        let half = a.len() / 2;
        for (r1, r2) in a[..half].iter().zip(&a[half..]) {
            assert_eq!(r1.trace.tokens, r2.trace.tokens);
            assert_eq!(r1.correct, r2.correct);
        }
        assert_eq!(s[0].pass1, s[1].pass1);
        assert_eq!(s[0].avg_tokens, s[1].avg_tokens);
    }

    #[test]
    fn question_order_does_not_change_summaries() {
        let (vocab, model, tasks, cfg) = eval_setup();
        let ms = methods(&vocab);
        let (fwd, _) = run_eval(&model, &vocab, &tasks, &ms, &cfg, &OracleJudge, &Serial).unwrap();
        let reversed: Vec<TaskRecord> = tasks.iter().rev().cloned().collect();
        let (rev, _) =
            run_eval(&model, &vocab, &reversed, &ms, &cfg, &OracleJudge, &Serial).unwrap();
        for (a, b) in fwd.iter().zip(&rev) {
            assert_eq!(a.pass1, b.pass1);
            assert_eq!(a.format_rate, b.format_rate);
            assert_eq!(a.avg_tokens, b.avg_tokens);
        }
    }

    #[test]
    fn regex_pass_never_exceeds_hybrid_pass() {
        let (vocab, model, tasks, cfg) = eval_setup();
        let ms = methods(&vocab);
        for judge_flavor in [true, false] {
            let judge: &dyn Judge = if judge_flavor { &Always(true) } else { &OracleJudge };
            let (s, _) = run_eval(&model, &vocab, &tasks, &ms, &cfg, judge, &Serial).unwrap();
            for row in &s {
                assert!(row.regex_pass1 <= row.pass1 + 1e-15);
            }
        }
    }

    #[test]
    fn duplicate_method_names_are_rejected() {
        let (vocab, model, tasks, cfg) = eval_setup();
        let mut ms = methods(&vocab);
        ms[1].name = ms[0].name.clone();
        assert!(matches!(
            run_eval(&model, &vocab, &tasks, &ms, &cfg, &OracleJudge, &Serial),
            Err(Error::InvalidConfig(_))
        ));
    }

    fn dummy_trace(len: usize) -> GenerationTrace {
        GenerationTrace {
            prompt_len: 1,
            tokens: alloc::vec![0; 1 + len],
            origin: core::iter::once(Origin::Prompt)
                .chain(std::iter::repeat_n(Origin::Sampled, len))
                .collect(),
            injection_positions: alloc::vec![],
            think_end_position: 1,
            termination: crate::bfdecode::Termination::AnswerEos,
            sampled_logprobs: core::iter::once(None)
                .chain(std::iter::repeat_n(Some(0.0), len))
                .collect(),
        }
    }

    fn rec(q: &str, s: usize, method: &str, correct: bool, len: usize) -> ArchiveRecord {
        ArchiveRecord {
            question_id: q.to_string(),
            sample_idx: s,
            method: method.to_string(),
            correct,
            judge_used: false,
            judge_failed: false,
            c_max: 1,
            b_max: 16,
            trace: dummy_trace(len),
        }
    }

    #[test]
    fn paired_probabilities_satisfy_the_difference_identity() {
        let mut records = Vec::new();
        let outcomes_a = [[true, true], [true, false], [false, false], [true, false]];
        let outcomes_b = [[false, true], [false, false], [true, true], [true, true]];
        for (qi, (oa, ob)) in outcomes_a.iter().zip(&outcomes_b).enumerate() {
            let q = alloc::format!("q{qi}");
            for (si, &c) in oa.iter().enumerate() {
                records.push(rec(&q, si, "a", c, 4));
            }
            for (si, &c) in ob.iter().enumerate() {
                records.push(rec(&q, si, "b", c, 4));
            }
        }
        let p = paired_probabilities(&records, "a", "b").unwrap();
        let diff = (p.p_first_only - p.p_second_only) - (p.pass1_first - p.pass1_second);
        assert!(diff.abs() < 1e-12, "identity violated by {diff}");
        assert_eq!(p.pass1_first, 0.5);
        assert_eq!(p.pass1_second, 0.625);
        // By hand: per-question p_a(1-p_b) = 1*0.5, 0.5*1, 0*0, 0.5*0.
        assert!((p.p_first_only - (0.5 + 0.5 + 0.0 + 0.0) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn paired_probabilities_reject_disjoint_question_sets() {
        let records = alloc::vec![rec("q0", 0, "a", true, 4), rec("q1", 0, "b", true, 4)];
        assert_eq!(
            paired_probabilities(&records, "a", "b"),
            Err(Error::QuestionSetMismatch)
        );
        assert_eq!(
            paired_probabilities(&records, "a", "missing"),
            Err(Error::QuestionSetMismatch)
        );
    }

    #[test]
    fn length_histogram_buckets_and_totals() {
        let records = alloc::vec![
            rec("q0", 0, "a", true, 3),
            rec("q0", 1, "a", false, 5),
            rec("q1", 0, "a", true, 12),
        ];
        let h = length_histogram(&records, 5);
        assert_eq!(h.counts, alloc::vec![1, 1, 1]);
        assert_eq!(h.total(), 3);
    }

    #[test]
    fn first_token_stats_read_the_token_after_each_injection() {
        let mut trace = dummy_trace(6);
        trace.tokens = alloc::vec![0, 9, 4, 4, 7, 9, 8];
        trace.origin = alloc::vec![
            Origin::Prompt,
            Origin::Sampled,
            Origin::Injected,
            Origin::Injected,
            Origin::Sampled,
            Origin::Injected,
            Origin::Sampled,
        ];
        trace.sampled_logprobs = alloc::vec![None, Some(0.0), None, None, Some(0.0), None, Some(0.0)];
        trace.injection_positions = alloc::vec![2, 5];
        let mut record = rec("q0", 0, "a", true, 6);
        record.trace = trace;
        let stats = first_token_stats(&[record]);
        assert_eq!(stats.injection_groups, 2);
        assert_eq!(stats.counts.get(&7), Some(&1));
        assert_eq!(stats.counts.get(&8), Some(&1));
    }

    #[test]
    fn tokens_vs_accuracy_recounts_the_archive() {
        let records = alloc::vec![
            rec("q0", 0, "a", true, 10),
            rec("q0", 1, "a", false, 20),
            rec("q0", 0, "b", true, 30),
        ];
        let curve = tokens_vs_accuracy(&records);
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[0].method, "a");
        assert_eq!(curve[0].avg_tokens, 15.0);
        assert_eq!(curve[0].pass1, 0.5);
        assert_eq!(curve[1].method, "b");
        assert_eq!(curve[1].avg_tokens, 30.0);
        assert_eq!(curve[1].pass1, 1.0);
    }
}
