//! Reinforcement training of the continuation row on a frozen base model.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args as ClapArgs;

use bftok_core::grpo::{train_token, GrpoConfig, TaskVerifier};

use super::merge;
use crate::config::RunConfig;
use crate::io::{self, TokenBundle};
use crate::pool::Pool;
use crate::{Global, UsageError};

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// Base checkpoint from pretrain.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Training task file from gen-data.
    #[arg(long)]
    pub tasks: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Rollouts per question.
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Importance-ratio clip width.
    #[arg(long)]
    pub clip_epsilon: Option<f64>,
    /// Optimization passes per update.
    #[arg(long)]
    pub inner_epochs: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Rollout temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Questions drawn per update.
    #[arg(long)]
    pub questions_per_update: Option<usize>,
    /// Optimizer updates.
    #[arg(long)]
    pub updates: Option<usize>,
    /// Injection cap during rollouts.
    #[arg(long)]
    pub c_max: Option<usize>,
    /// Thinking budget.
    #[arg(long)]
    pub b_max: Option<usize>,
    /// Answer budget.
    #[arg(long)]
    pub answer_reserve: Option<usize>,
    /// Initialize the trainable row from the wait cue.
    #[arg(long)]
    pub init_from_wait: Option<bool>,
    /// Cosine-decay horizon in updates; defaults to the update count.
    #[arg(long)]
    pub schedule_horizon: Option<usize>,
}

pub fn run(args: Args, global: &Global) -> Result<()> {
    let mut cfg = RunConfig::load(global.config.as_deref())?;
    merge!(cfg.seed, global.seed);
    merge!(cfg.workers, global.workers);
    merge!(cfg.train.group_size, args.group_size);
    merge!(cfg.train.clip_epsilon, args.clip_epsilon);
    merge!(cfg.train.inner_epochs, args.inner_epochs);
    merge!(cfg.train.lr, args.lr);
    merge!(cfg.train.temperature, args.temperature);
    merge!(cfg.train.questions_per_update, args.questions_per_update);
    merge!(cfg.train.updates, args.updates);
    merge!(cfg.train.c_max, args.c_max);
    merge!(cfg.train.b_max, args.b_max);
    merge!(cfg.train.answer_reserve, args.answer_reserve);
    merge!(cfg.train.init_from_wait, args.init_from_wait);
    if args.schedule_horizon.is_some() {
        cfg.train.schedule_horizon = args.schedule_horizon;
    }

    let (mut model, vocab, base_bytes) = io::load_checkpoint_file(&args.checkpoint)?;
    let base_checksum = io::checksum_hex(&base_bytes);
    let row_id = match model.config.continuation {
        Some(id) => id,
        None => bail!("checkpoint {} has no continuation token", args.checkpoint.display()),
    };

    let tasks = io::rows_to_tasks(io::read_jsonl(&args.tasks)?);
    if tasks.is_empty() {
        bail!("task file {} holds no records", args.tasks.display());
    }

    let t = &cfg.train;
    let grpo = GrpoConfig {
        group_size: t.group_size,
        clip_epsilon: t.clip_epsilon,
        kl_coefficient: t.kl_coefficient,
        inner_epochs: t.inner_epochs,
        learning_rate: t.lr,
        schedule_horizon: t.schedule_horizon.unwrap_or(t.updates).max(1),
        temperature: t.temperature,
        questions_per_update: t.questions_per_update,
        updates: t.updates,
        c_max: t.c_max,
        b_max: t.b_max,
        answer_reserve: t.answer_reserve,
        system_prompt: cfg.system_prompt.clone(),
        init_from: t.init_from_wait.then_some(vocab.cues.wait),
    };
    grpo.validate()
        .map_err(|e| anyhow::Error::new(UsageError(format!("invalid training config: {e}"))))?;

    let pool = Pool::new(cfg.workers)?;
    let outcome = train_token(&mut model, &vocab, &tasks, &grpo, &TaskVerifier, cfg.seed, &pool)
        .map_err(|e| anyhow::anyhow!("training failed: {e}"))?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("failed to create {}", args.out.display()))?;
    io::save_checkpoint_file(&args.out.join("trained.ckpt"), &model, &vocab)?;
    let bundle = TokenBundle {
        base_checksum,
        seed: cfg.seed,
        config: toml::Value::try_from(&cfg.train).context("failed to serialize train section")?,
        row_id,
        row: model
            .embedding_row(row_id)
            .map_err(|e| anyhow::anyhow!("{e}"))?
            .to_vec(),
    };
    io::write_token_bundle(&args.out.join("token.json"), &bundle)?;
    io::write_text(&args.out.join("metrics.csv"), &io::metrics_csv(&outcome.metrics))?;
    let group_rows = outcome
        .group_rewards
        .iter()
        .enumerate()
        .map(|(i, r)| vec![i.to_string(), r.to_string()]);
    io::write_text(
        &args.out.join("groups.csv"),
        &io::csv("group,mean_reward", group_rows),
    )?;
    cfg.snapshot(&args.out)?;

    if let (Some(first), Some(last)) = (outcome.metrics.first(), outcome.metrics.last()) {
        println!(
            "trained {} updates: mean reward {} -> {}, row norm {}",
            outcome.metrics.len(),
            first.mean_reward,
            last.mean_reward,
            last.theta_norm
        );
    } else {
        println!("trained 0 updates");
    }
    Ok(())
}
