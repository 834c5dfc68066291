//! Generates the task datasets and the pretraining corpus.
//!
//! Three files with disjoint random streams: a training task set, a
//! held-out evaluation task set, and a rendered pretraining corpus.
//! Training tasks and corpus examples whose question text collides with
//! a held-out question are dropped (drawing replacements from further
//! down the stream), so nothing evaluated on was ever trained on.

use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args as ClapArgs;

use bftok_core::rng::stream_id;
use bftok_core::tasks::{gen_dataset, gen_pretrain_corpus, TaskRecord};

use super::merge;
use crate::config::RunConfig;
use crate::io::{self, CorpusRow};
use crate::{Global, UsageError};

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Training task count.
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Held-out evaluation task count.
    #[arg(long)]
    pub n_eval: Option<usize>,
    /// Pretraining corpus size.
    #[arg(long)]
    pub n_corpus: Option<usize>,
    /// Fraction of corpus examples with a correction cue.
    #[arg(long)]
    pub corpus_fraction: Option<f64>,
    /// Minimum operations per question.
    #[arg(long)]
    pub difficulty_min: Option<usize>,
    /// Maximum operations per question.
    #[arg(long)]
    pub difficulty_max: Option<usize>,
}

pub fn run(args: Args, global: &Global) -> Result<()> {
    let mut cfg = RunConfig::load(global.config.as_deref())?;
    merge!(cfg.seed, global.seed);
    merge!(cfg.workers, global.workers);
    merge!(cfg.data.n_train, args.n_train);
    merge!(cfg.data.n_eval, args.n_eval);
    merge!(cfg.data.n_corpus, args.n_corpus);
    merge!(cfg.data.corpus_fraction, args.corpus_fraction);
    merge!(cfg.data.difficulty_min, args.difficulty_min);
    merge!(cfg.data.difficulty_max, args.difficulty_max);

    let d = &cfg.data;
    if d.n_train == 0 || d.n_eval == 0 || d.n_corpus == 0 {
        bail!(UsageError("record counts must be positive".into()));
    }
    if d.difficulty_min == 0 || d.difficulty_min > d.difficulty_max {
        bail!(UsageError("difficulty range must be 1 <= min <= max".into()));
    }
    if !(0.0..=1.0).contains(&d.corpus_fraction) {
        bail!(UsageError("corpus_fraction must lie in [0, 1]".into()));
    }

    let range = d.difficulty_min..=d.difficulty_max;
    let eval_seed = stream_id("data-eval", &[cfg.seed]);
    let train_seed = stream_id("data-train", &[cfg.seed]);
    let corpus_seed = stream_id("data-corpus", &[cfg.seed]);

    let eval = gen_dataset(eval_seed, d.n_eval, range.clone());
    let held_out: BTreeSet<&str> = eval.iter().map(|t| t.question.as_str()).collect();

    let surplus = |n: usize| n + n / 4 + 64;
    let train: Vec<TaskRecord> = gen_dataset(train_seed, surplus(d.n_train), range.clone())
        .into_iter()
        .filter(|t| !held_out.contains(t.question.as_str()))
        .take(d.n_train)
        .collect();
    if train.len() < d.n_train {
        bail!("task space too small to draw {} training tasks disjoint from evaluation", d.n_train);
    }

    let corpus: Vec<CorpusRow> = gen_pretrain_corpus(
        corpus_seed,
        surplus(d.n_corpus),
        d.corpus_fraction,
        range,
    )
    .iter()
    .filter(|e| !held_out.contains(e.task.question.as_str()))
    .take(d.n_corpus)
    .map(CorpusRow::from)
    .collect();
    if corpus.len() < d.n_corpus {
        bail!("task space too small to draw {} corpus examples disjoint from evaluation", d.n_corpus);
    }

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("failed to create {}", args.out.display()))?;
    io::write_jsonl(&args.out.join("train.jsonl"), &io::tasks_to_rows(&train))?;
    io::write_jsonl(&args.out.join("eval.jsonl"), &io::tasks_to_rows(&eval))?;
    io::write_jsonl(&args.out.join("corpus.jsonl"), &corpus)?;
    cfg.snapshot(&args.out)?;
    println!(
        "wrote {} train, {} eval, {} corpus records to {}",
        train.len(),
        eval.len(),
        corpus.len(),
        args.out.display()
    );
    Ok(())
}
