//! File formats: line-delimited JSON for datasets and trace archives,
//! CSV for summaries and metrics, binary checkpoints, and the trained-token
//! bundle with its provenance header.
//!
//! Serialization is fully deterministic: struct fields serialize in
//! declaration order, floats print in shortest round-trip form, and every
//! writer emits `\n` line endings. Two runs with the same resolved config
//! and seed therefore produce byte-identical files.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use bftok_core::bfdecode::{GenerationTrace, Origin, Termination};
use bftok_core::eval::{ArchiveRecord, MethodSummary};
use bftok_core::grpo::UpdateMetrics;
use bftok_core::model::{load_checkpoint, save_checkpoint, Model};
use bftok_core::tasks::{CorpusExample, TaskRecord};
use bftok_core::vocab::Vocab;
use bftok_core::Real;

/// Writes one JSON object per line, each terminated by `\n`.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("failed to write {}", path.display()))
}

/// Reads a line-delimited JSON file, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("failed to read {}", path.display()))?;
    let mut items = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: malformed record", path.display(), lineno + 1))?;
        items.push(item);
    }
    Ok(items)
}

/// One task on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskRow {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub difficulty: usize,
}

impl From<&TaskRecord> for TaskRow {
    fn from(t: &TaskRecord) -> Self {
        TaskRow {
            id: t.id.clone(),
            question: t.question.clone(),
            answer: t.answer.clone(),
            difficulty: t.difficulty,
        }
    }
}

impl From<TaskRow> for TaskRecord {
    fn from(r: TaskRow) -> Self {
        TaskRecord {
            id: r.id,
            question: r.question,
            answer: r.answer,
            difficulty: r.difficulty,
        }
    }
}

/// One pretraining example on disk: the task plus its rendered text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRow {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub difficulty: usize,
    pub text: String,
}

impl From<&CorpusExample> for CorpusRow {
    fn from(e: &CorpusExample) -> Self {
        CorpusRow {
            id: e.task.id.clone(),
            question: e.task.question.clone(),
            answer: e.task.answer.clone(),
            difficulty: e.task.difficulty,
            text: e.text.clone(),
        }
    }
}

fn origin_char(origin: Origin) -> char {
    match origin {
        Origin::Prompt => 'p',
        Origin::Sampled => 's',
        Origin::Injected => 'i',
        Origin::ForcedClose => 'f',
    }
}

fn origin_from_char(c: char) -> Result<Origin> {
    Ok(match c {
        'p' => Origin::Prompt,
        's' => Origin::Sampled,
        'i' => Origin::Injected,
        'f' => Origin::ForcedClose,
        other => bail!("unknown origin code {other:?}"),
    })
}

fn termination_str(t: Termination) -> &'static str {
    match t {
        Termination::AnswerEos => "answer_eos",
        Termination::AnswerBudgetExhausted => "answer_budget_exhausted",
    }
}

fn termination_from_str(s: &str) -> Result<Termination> {
    Ok(match s {
        "answer_eos" => Termination::AnswerEos,
        "answer_budget_exhausted" => Termination::AnswerBudgetExhausted,
        other => bail!("unknown termination {other:?}"),
    })
}

/// One archived evaluation sample: verification fields plus the generation
/// trace. Origins are packed one character per token (`p` prompt,
/// `s` sampled, `i` injected, `f` forced close). Per-token log-probabilities
/// are not part of the on-disk format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchiveRow {
    pub question_id: String,
    pub sample_idx: usize,
    pub method: String,
    pub correct: bool,
    pub judge_used: bool,
    pub judge_failed: bool,
    pub c_max: usize,
    pub b_max: usize,
    pub tokens: Vec<u32>,
    pub origins: String,
    pub injection_positions: Vec<usize>,
    pub think_end_position: usize,
    pub termination: String,
    pub prompt_len: usize,
}

impl From<&ArchiveRecord> for ArchiveRow {
    fn from(r: &ArchiveRecord) -> Self {
        let t = &r.trace;
        ArchiveRow {
            question_id: r.question_id.clone(),
            sample_idx: r.sample_idx,
            method: r.method.clone(),
            correct: r.correct,
            judge_used: r.judge_used,
            judge_failed: r.judge_failed,
            c_max: r.c_max,
            b_max: r.b_max,
            tokens: t.tokens.clone(),
            origins: t.origin.iter().copied().map(origin_char).collect(),
            injection_positions: t.injection_positions.clone(),
            think_end_position: t.think_end_position,
            termination: termination_str(t.termination).to_string(),
            prompt_len: t.prompt_len,
        }
    }
}

impl ArchiveRow {
    pub fn into_record(self) -> Result<ArchiveRecord> {
        if self.origins.chars().count() != self.tokens.len() {
            bail!("origin string length does not match token count");
        }
        let origin = self
            .origins
            .chars()
            .map(origin_from_char)
            .collect::<Result<Vec<_>>>()?;
        let n = self.tokens.len();
        let trace = GenerationTrace {
            prompt_len: self.prompt_len,
            tokens: self.tokens,
            origin,
            injection_positions: self.injection_positions,
            think_end_position: self.think_end_position,
            termination: termination_from_str(&self.termination)?,
            sampled_logprobs: vec![None; n],
        };
        Ok(ArchiveRecord {
            question_id: self.question_id,
            sample_idx: self.sample_idx,
            method: self.method,
            correct: self.correct,
            judge_used: self.judge_used,
            judge_failed: self.judge_failed,
            c_max: self.c_max,
            b_max: self.b_max,
            trace,
        })
    }
}

/// Reads a trace archive back into records. Log-probabilities come back
/// empty; every other trace field round-trips exactly.
pub fn read_archive(path: &Path) -> Result<Vec<ArchiveRecord>> {
    read_jsonl::<ArchiveRow>(path)?
        .into_iter()
        .map(ArchiveRow::into_record)
        .collect()
}

pub fn write_archive(path: &Path, records: &[ArchiveRecord]) -> Result<()> {
    let rows: Vec<ArchiveRow> = records.iter().map(ArchiveRow::from).collect();
    write_jsonl(path, &rows)
}

/// Renders rows as CSV with a fixed header. Values must not contain commas,
/// quotes, or newlines; every value this crate emits satisfies that.
pub(crate) fn csv(header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let width = header.split(',').count();
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), width);
        debug_assert!(row.iter().all(|v| !v.contains([',', '"', '\n'])));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Table-shaped evaluation summary, one row per method setting.
pub fn summary_csv(summaries: &[MethodSummary]) -> String {
    csv(
        "method,c_max,b_max,pass1,stderr,format_rate,avg_tokens,regex_pass1,judge_calls,judge_failures",
        summaries.iter().map(|s| {
            vec![
                s.method.clone(),
                s.c_max.to_string(),
                s.b_max.to_string(),
                s.pass1.to_string(),
                s.stderr.to_string(),
                s.format_rate.to_string(),
                s.avg_tokens.to_string(),
                s.regex_pass1.to_string(),
                s.judge_calls.to_string(),
                s.judge_failures.to_string(),
            ]
        }),
    )
}

/// Training metrics, one row per optimizer update.
pub fn metrics_csv(metrics: &[UpdateMetrics]) -> String {
    csv(
        "update,mean_reward,mean_format,mean_correct,clip_fraction,theta_norm,lr",
        metrics.iter().map(|m| {
            vec![
                m.update.to_string(),
                m.mean_reward.to_string(),
                m.mean_format.to_string(),
                m.mean_correct.to_string(),
                m.clip_fraction.to_string(),
                m.theta_norm.to_string(),
                m.lr.to_string(),
            ]
        }),
    )
}

/// Pretraining loss curve. Validation loss is measured at logging steps.
pub fn losses_csv(rows: &[(usize, f64, f64)]) -> String {
    csv(
        "step,train_loss,val_loss",
        rows.iter()
            .map(|(s, t, v)| vec![s.to_string(), t.to_string(), v.to_string()]),
    )
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("failed to write {}", path.display()))
}

/// Saves a model checkpoint file.
pub fn save_checkpoint_file<R: Real>(path: &Path, model: &Model<R>, vocab: &Vocab) -> Result<()> {
    fs::write(path, save_checkpoint(model, vocab))
        .with_context(|| format!("failed to write {}", path.display()))
}

/// Loads a model checkpoint along with its raw bytes (for checksums).
pub fn load_checkpoint_file(path: &Path) -> Result<(Model<f32>, Vocab, Vec<u8>)> {
    let bytes =
        fs::read(path).with_context(|| format!("failed to read {}", path.display()))?;
    let (model, vocab) = load_checkpoint(&bytes)
        .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok((model, vocab, bytes))
}

/// Provenance header plus the trained row itself, written next to the
/// trained checkpoint. `base_checksum` fingerprints the exact base
/// checkpoint bytes the run started from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenBundle {
    pub base_checksum: String,
    pub seed: u64,
    pub config: toml::Value,
    pub row_id: u32,
    pub row: Vec<f32>,
}

pub fn write_token_bundle(path: &Path, bundle: &TokenBundle) -> Result<()> {
    let mut text = serde_json::to_string_pretty(bundle)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("failed to write {}", path.display()))
}

#[cfg(test)]
pub fn read_token_bundle(path: &Path) -> Result<TokenBundle> {
    let text =
        fs::read_to_string(path).with_context(|| format!("failed to read {}", path.display()))?;
    serde_json::from_str(&text)
        .with_context(|| format!("{}: malformed token bundle", path.display()))
}

/// Hex fingerprint of checkpoint bytes.
pub fn checksum_hex(bytes: &[u8]) -> String {
    format!("{:016x}", bftok_core::model::fnv1a64(bytes))
}

pub fn tasks_to_rows(tasks: &[TaskRecord]) -> Vec<TaskRow> {
    tasks.iter().map(TaskRow::from).collect()
}

pub fn rows_to_tasks(rows: Vec<TaskRow>) -> Vec<TaskRecord> {
    rows.into_iter().map(TaskRecord::from).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::scratch_dir;
    use bftok_core::rng::SamplerState;

    fn sample_trace() -> GenerationTrace {
        GenerationTrace {
            prompt_len: 3,
            tokens: vec![5, 6, 7, 8, 9, 10, 11],
            origin: vec![
                Origin::Prompt,
                Origin::Prompt,
                Origin::Prompt,
                Origin::Sampled,
                Origin::Injected,
                Origin::ForcedClose,
                Origin::Sampled,
            ],
            injection_positions: vec![4],
            think_end_position: 5,
            termination: Termination::AnswerEos,
            sampled_logprobs: vec![None, None, None, Some(-0.5), None, None, Some(-1.25)],
        }
    }

    fn sample_record(id: &str, sample_idx: usize) -> ArchiveRecord {
        ArchiveRecord {
            question_id: id.to_string(),
            sample_idx,
            method: "wait-c1-b96".to_string(),
            correct: sample_idx.is_multiple_of(2),
            judge_used: false,
            judge_failed: false,
            c_max: 1,
            b_max: 96,
            trace: sample_trace(),
        }
    }

    #[test]
    fn archive_round_trips_everything_but_logprobs() {
        let dir = scratch_dir("archive-roundtrip");
        let path = dir.join("archive.jsonl");
        let records = vec![sample_record("t-1", 0), sample_record("t-2", 1)];
        write_archive(&path, &records).unwrap();
        let back = read_archive(&path).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.question_id, b.question_id);
            assert_eq!(a.method, b.method);
            assert_eq!(a.correct, b.correct);
            assert_eq!(a.trace.tokens, b.trace.tokens);
            assert_eq!(a.trace.origin, b.trace.origin);
            assert_eq!(a.trace.injection_positions, b.trace.injection_positions);
            assert_eq!(a.trace.think_end_position, b.trace.think_end_position);
            assert_eq!(a.trace.termination, b.trace.termination);
            assert_eq!(a.trace.prompt_len, b.trace.prompt_len);
            assert!(b.trace.sampled_logprobs.iter().all(Option::is_none));
        }
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn archive_rows_use_the_documented_field_names() {
        let row = ArchiveRow::from(&sample_record("t-9", 3));
        let json: serde_json::Value = serde_json::from_str(&serde_json::to_string(&row).unwrap()).unwrap();
        let obj = json.as_object().unwrap();
        for key in [
            "question_id",
            "sample_idx",
            "method",
            "correct",
            "judge_used",
            "tokens",
            "origins",
            "injection_positions",
            "think_end_position",
            "termination",
            "prompt_len",
        ] {
            assert!(obj.contains_key(key), "missing field {key}");
        }
        assert_eq!(obj["origins"], serde_json::json!("pppsifs"));
        assert_eq!(obj["termination"], serde_json::json!("answer_eos"));
    }

    #[test]
    fn malformed_origin_codes_are_rejected() {
        let mut row = ArchiveRow::from(&sample_record("t-1", 0));
        row.origins = "pppsifx".to_string();
        assert!(row.into_record().is_err());
        let mut row = ArchiveRow::from(&sample_record("t-1", 0));
        row.origins = "ppp".to_string();
        assert!(row.into_record().is_err());
    }

    #[test]
    fn task_rows_round_trip_through_jsonl() {
        let dir = scratch_dir("task-roundtrip");
        let path = dir.join("tasks.jsonl");
        let tasks = bftok_core::tasks::gen_dataset(11, 25, 1..=3);
        write_jsonl(&path, &tasks_to_rows(&tasks)).unwrap();
        let back = rows_to_tasks(read_jsonl(&path).unwrap());
        assert_eq!(back, tasks);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn csv_writers_emit_fixed_headers() {
        let summary = summary_csv(&[]);
        assert!(summary.starts_with("method,c_max,b_max,pass1,stderr,format_rate,avg_tokens"));
        let metrics = metrics_csv(&[]);
        assert_eq!(
            metrics,
            "update,mean_reward,mean_format,mean_correct,clip_fraction,theta_norm,lr\n"
        );
        let losses = losses_csv(&[(0, 4.5, 4.75)]);
        assert_eq!(losses, "step,train_loss,val_loss\n0,4.5,4.75\n");
    }

    #[test]
    fn checkpoint_files_round_trip() {
        let dir = scratch_dir("ckpt-roundtrip");
        let path = dir.join("model.ckpt");
        let mut vocab = Vocab::core_alphabet();
        vocab.add_continuation().unwrap();
        let cfg = bftok_core::model::ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            context_len: 32,
            vocab_size: vocab.size(),
            layernorm_epsilon: 1e-5,
            continuation: vocab.special.continuation,
            continue_in_normalizer: false,
        };
        let model = Model::<f32>::init(cfg, &mut SamplerState::new(5, 0).rng()).unwrap();
        save_checkpoint_file(&path, &model, &vocab).unwrap();
        let (back, back_vocab, bytes) = load_checkpoint_file(&path).unwrap();
        assert_eq!(back.params, model.params);
        assert_eq!(back_vocab, vocab);
        assert_eq!(checksum_hex(&bytes).len(), 16);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn token_bundles_round_trip_exact_floats() {
        let dir = scratch_dir("bundle-roundtrip");
        let path = dir.join("token.json");
        let bundle = TokenBundle {
            base_checksum: "00ff00ff00ff00ff".to_string(),
            seed: 42,
            config: toml::Value::Table(toml::map::Map::new()),
            row_id: 101,
            row: vec![0.1f32, -2.5e-8, 3.0, f32::MIN_POSITIVE],
        };
        write_token_bundle(&path, &bundle).unwrap();
        let back = read_token_bundle(&path).unwrap();
        assert_eq!(back.row, bundle.row);
        assert_eq!(back.base_checksum, bundle.base_checksum);
        assert_eq!(back.row_id, 101);
        std::fs::remove_dir_all(dir).unwrap();
    }
}
