//! Run configuration: a TOML file with fixed key names, overridden by
//! command-line flags, resolved into one snapshot written next to every
//! run's outputs.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use bftok_core::model::ModelConfig;
use bftok_core::tasks::SYSTEM_PROMPT;
use bftok_core::vocab::TokenId;

/// Everything a run can configure. Each command reads the sections it
/// needs; the resolved struct is what gets snapshotted.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 means one per CPU.
    pub workers: usize,
    pub system_prompt: String,
    pub data: DataSection,
    pub model: ModelSection,
    pub pretrain: PretrainSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub judge: JudgeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            workers: 0,
            system_prompt: SYSTEM_PROMPT.to_string(),
            data: DataSection::default(),
            model: ModelSection::default(),
            pretrain: PretrainSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            judge: JudgeSection::default(),
        }
    }
}

/// Dataset and corpus generation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n_train: usize,
    pub n_eval: usize,
    pub n_corpus: usize,
    /// Fraction of corpus examples that practice a correction cue.
    pub corpus_fraction: f64,
    pub difficulty_min: usize,
    pub difficulty_max: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            n_train: 4096,
            n_eval: 64,
            n_corpus: 16384,
            corpus_fraction: 0.5,
            difficulty_min: 2,
            difficulty_max: 4,
        }
    }
}

/// Architecture of the base model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub layernorm_epsilon: f64,
    /// Keep the continuation token inside log-probability normalizers.
    pub continue_in_normalizer: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let r = ModelConfig::reference(1, None);
        ModelSection {
            d_model: r.d_model,
            n_layers: r.n_layers,
            n_heads: r.n_heads,
            d_ff: r.d_ff,
            context_len: r.context_len,
            layernorm_epsilon: r.layernorm_epsilon,
            continue_in_normalizer: r.continue_in_normalizer,
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self, vocab_size: usize, continuation: Option<TokenId>) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            context_len: self.context_len,
            vocab_size,
            layernorm_epsilon: self.layernorm_epsilon,
            continuation,
            continue_in_normalizer: self.continue_in_normalizer,
        }
    }
}

/// Supervised pretraining.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Held-out fraction of the corpus for validation loss.
    pub val_fraction: f64,
    /// Stop early once validation loss drops below this; 0 disables.
    pub target_val_loss: f64,
    /// Steps between loss-curve rows.
    pub log_interval: usize,
    /// Validation sequences scored per measurement.
    pub val_batch: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            steps: 3000,
            batch: 8,
            lr: 1e-3,
            val_fraction: 0.05,
            target_val_loss: 0.0,
            log_interval: 50,
            val_batch: 32,
        }
    }
}

/// Reinforcement training of the continuation row.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_coefficient: f64,
    pub inner_epochs: usize,
    pub lr: f64,
    pub temperature: f64,
    pub questions_per_update: usize,
    pub updates: usize,
    pub c_max: usize,
    pub b_max: usize,
    pub answer_reserve: usize,
    /// Initialize the trainable row from the single-token wait cue.
    pub init_from_wait: bool,
    /// Cosine-decay horizon in updates; unset means decay over `updates`.
    pub schedule_horizon: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            group_size: 16,
            clip_epsilon: 0.2,
            kl_coefficient: 0.0,
            inner_epochs: 4,
            lr: 4e-3,
            temperature: 0.9,
            questions_per_update: 8,
            updates: 60,
            c_max: 1,
            b_max: 96,
            answer_reserve: 48,
            init_from_wait: true,
            schedule_horizon: None,
        }
    }
}

/// Evaluation grid.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Samples per question.
    pub k: usize,
    pub temperature: f64,
    /// Thinking budgets to sweep.
    pub b_max: Vec<usize>,
    /// Injection caps to sweep (forcing methods only).
    pub c_max: Vec<usize>,
    pub answer_reserve: usize,
    /// Method names: plain, learned, wait, alt, hmm, critique.
    pub methods: Vec<String>,
    /// Cap on evaluation questions; 0 means the whole file.
    pub questions: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            k: 4,
            temperature: 0.9,
            b_max: vec![96],
            c_max: vec![1, 2, 3],
            answer_reserve: 48,
            methods: ["plain", "learned", "wait", "alt", "hmm", "critique"]
                .map(String::from)
                .to_vec(),
            questions: 0,
        }
    }
}

/// Remote judge endpoint; blank falls back to the local judge. The
/// `BFTOK_JUDGE_URL`, `BFTOK_JUDGE_KEY`, and `BFTOK_JUDGE_MODEL`
/// environment variables override these.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct JudgeSection {
    pub url: String,
    pub model: String,
}

impl RunConfig {
    /// Loads a TOML config file, or the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("failed to read {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("{}: invalid config", p.display()))
            }
        }
    }

    /// Writes the resolved snapshot next to a run's outputs.
    pub fn snapshot(&self, out_dir: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).context("failed to serialize config")?;
        let path = out_dir.join("config.toml");
        std::fs::write(&path, text)
            .with_context(|| format!("failed to write {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::scratch_dir;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn snapshot_reloads_to_the_same_config() {
        let dir = scratch_dir("config-snapshot");
        let mut cfg = RunConfig {
            seed: 99,
            ..RunConfig::default()
        };
        cfg.train.lr = 0.25;
        cfg.eval.b_max = vec![32, 64];
        cfg.snapshot(&dir).unwrap();
        let back = RunConfig::load(Some(&dir.join("config.toml"))).unwrap();
        assert_eq!(back, cfg);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn partial_files_fill_in_defaults() {
        let dir = scratch_dir("config-partial");
        let path = dir.join("partial.toml");
        std::fs::write(&path, "seed = 3\n[train]\nupdates = 2\n").unwrap();
        let cfg = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.train.updates, 2);
        assert_eq!(cfg.train.group_size, TrainSection::default().group_size);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = scratch_dir("config-unknown");
        let path = dir.join("bad.toml");
        std::fs::write(&path, "sede = 3\n").unwrap();
        assert!(RunConfig::load(Some(&path)).is_err());
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn default_prompt_is_the_training_prompt() {
        assert_eq!(RunConfig::default().system_prompt, SYSTEM_PROMPT);
    }
}
