//! Evaluates a checkpoint over the configured method grid.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args as ClapArgs;

use bftok_core::eval::{run_eval, EvalConfig, Judge, MethodSpec, OracleJudge};
use bftok_core::tasks::{Cue, CORRECTION_PHRASE};
use bftok_core::vocab::{TokenId, Vocab};

use super::merge;
use crate::config::RunConfig;
use crate::io;
use crate::judge::RemoteJudge;
use crate::pool::Pool;
use crate::{Global, UsageError};

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// Checkpoint to evaluate (base or trained).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Held-out task file from gen-data.
    #[arg(long)]
    pub tasks: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Samples per question.
    #[arg(long)]
    pub k: Option<usize>,
    /// Sampling temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Thinking budgets to sweep (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub b_max: Option<Vec<usize>>,
    /// Injection caps to sweep (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub c_max: Option<Vec<usize>>,
    /// Answer budget.
    #[arg(long)]
    pub answer_reserve: Option<usize>,
    /// Methods to run (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Cap on evaluation questions; 0 uses the whole file.
    #[arg(long)]
    pub questions: Option<usize>,
}

/// Injection tokens for a named method; `None` marks the plain baseline.
fn injection_for(name: &str, vocab: &Vocab) -> Result<Option<Vec<TokenId>>> {
    Ok(match name {
        "plain" => None,
        "learned" => {
            let id = vocab.special.continuation.ok_or_else(|| {
                anyhow::anyhow!("checkpoint has no continuation token for method 'learned'")
            })?;
            Some(vec![id])
        }
        "wait" => Some(vec![vocab.cues.wait]),
        "alt" => Some(vec![vocab.cues.alt]),
        "hmm" => Some(vec![vocab.cues.hmm]),
        "critique" => {
            let text = format!("{}{}", Cue::Critique.marker(), CORRECTION_PHRASE);
            Some(vocab.encode(&text).map_err(|e| anyhow::anyhow!("{e}"))?)
        }
        other => bail!(UsageError(format!(
            "unknown method {other:?}; expected plain, learned, wait, alt, hmm, or critique"
        ))),
    })
}

/// Expands method names across the c_max and b_max sweeps. Forcing
/// methods contribute one row per (c_max, b_max) cell; the plain
/// baseline has no injections to cap, so it sweeps b_max only.
pub fn build_methods(
    names: &[String],
    c_list: &[usize],
    b_list: &[usize],
    vocab: &Vocab,
) -> Result<Vec<MethodSpec>> {
    let mut specs = Vec::new();
    for name in names {
        match injection_for(name, vocab)? {
            None => {
                for &b in b_list {
                    specs.push(MethodSpec {
                        name: format!("plain-b{b}"),
                        c_max: 0,
                        injection: Vec::new(),
                        b_max: Some(b),
                    });
                }
            }
            Some(injection) => {
                for &c in c_list {
                    for &b in b_list {
                        specs.push(MethodSpec {
                            name: format!("{name}-c{c}-b{b}"),
                            c_max: c,
                            injection: injection.clone(),
                            b_max: Some(b),
                        });
                    }
                }
            }
        }
    }
    Ok(specs)
}

pub fn run(args: Args, global: &Global) -> Result<()> {
    let mut cfg = RunConfig::load(global.config.as_deref())?;
    merge!(cfg.seed, global.seed);
    merge!(cfg.workers, global.workers);
    merge!(cfg.eval.k, args.k);
    merge!(cfg.eval.temperature, args.temperature);
    merge!(cfg.eval.b_max, args.b_max);
    merge!(cfg.eval.c_max, args.c_max);
    merge!(cfg.eval.answer_reserve, args.answer_reserve);
    merge!(cfg.eval.methods, args.methods);
    merge!(cfg.eval.questions, args.questions);

    let e = &cfg.eval;
    if e.k == 0 {
        bail!(UsageError("k must be positive".into()));
    }
    if e.methods.is_empty() || e.b_max.is_empty() || e.c_max.is_empty() {
        bail!(UsageError("methods, b_max, and c_max must be non-empty".into()));
    }
    if e.b_max.contains(&0) || e.answer_reserve == 0 {
        bail!(UsageError("budgets must be positive".into()));
    }
    if e.temperature.is_nan() || e.temperature <= 0.0 {
        bail!(UsageError("temperature must be positive".into()));
    }

    let (model, vocab, _) = io::load_checkpoint_file(&args.checkpoint)?;
    let mut tasks = io::rows_to_tasks(io::read_jsonl(&args.tasks)?);
    if e.questions > 0 {
        tasks.truncate(e.questions);
    }
    if tasks.is_empty() {
        bail!("task file {} holds no records", args.tasks.display());
    }

    let methods = build_methods(&e.methods, &e.c_max, &e.b_max, &vocab)?;
    let eval_cfg = EvalConfig {
        b_max: *e.b_max.iter().max().unwrap(),
        answer_reserve: e.answer_reserve,
        temperature: e.temperature,
        k: e.k,
        seed: cfg.seed,
        system_prompt: cfg.system_prompt.clone(),
    };

    let remote = RemoteJudge::from_env_or_config(&cfg.judge);
    let judge: &dyn Judge = match &remote {
        Some(r) => r,
        None => &OracleJudge,
    };

    let pool = Pool::new(cfg.workers)?;
    let (summaries, archive) =
        run_eval(&model, &vocab, &tasks, &methods, &eval_cfg, judge, &pool)
            .map_err(|e| anyhow::anyhow!("evaluation failed: {e}"))?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("failed to create {}", args.out.display()))?;
    io::write_text(&args.out.join("summary.csv"), &io::summary_csv(&summaries))?;
    io::write_archive(&args.out.join("archive.jsonl"), &archive)?;
    cfg.snapshot(&args.out)?;
    println!(
        "evaluated {} method settings x {} questions x {} samples -> {}",
        summaries.len(),
        tasks.len(),
        e.k,
        args.out.display()
    );
    for s in &summaries {
        println!("  {}: pass@1 {} (stderr {})", s.method, s.pass1, s.stderr);
    }
    Ok(())
}
