//! Supervised pretraining of the base model on the rendered corpus.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args as ClapArgs;
use rand::Rng;

use bftok_core::model::Model;
use bftok_core::rng::{stream_id, SamplerState};
use bftok_core::vocab::{TokenId, Vocab};

use super::merge;
use crate::config::RunConfig;
use crate::io::{self, CorpusRow};
use crate::{Global, UsageError};

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// Corpus file from gen-data.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Sequences per step.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Held-out fraction for validation loss.
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Stop once validation loss falls below this; 0 disables.
    #[arg(long)]
    pub target_val_loss: Option<f64>,
    /// Steps between loss-curve rows.
    #[arg(long)]
    pub log_interval: Option<usize>,
    /// Embedding width.
    #[arg(long)]
    pub d_model: Option<usize>,
    /// Transformer layers.
    #[arg(long)]
    pub n_layers: Option<usize>,
    /// Attention heads.
    #[arg(long)]
    pub n_heads: Option<usize>,
    /// Feed-forward width.
    #[arg(long)]
    pub d_ff: Option<usize>,
    /// Maximum sequence length.
    #[arg(long)]
    pub context_len: Option<usize>,
    /// Keep the continuation token inside log-probability normalizers.
    #[arg(long)]
    pub continue_in_normalizer: Option<bool>,
}

/// Linear warmup over the first steps, then cosine decay from the peak
/// rate down to 5% of it at the final configured step.
fn scheduled_lr(peak: f64, step: usize, total: usize) -> f64 {
    const WARMUP: usize = 100;
    const FLOOR: f64 = 0.05;
    let warmup = WARMUP.min(total / 10).max(1);
    if step <= warmup {
        return peak * step as f64 / warmup as f64;
    }
    let t = (step - warmup) as f64 / (total - warmup).max(1) as f64;
    let cos = 0.5 * (1.0 + (core::f64::consts::PI * t).cos());
    peak * (FLOOR + (1.0 - FLOOR) * cos)
}

pub fn run(args: Args, global: &Global) -> Result<()> {
    let mut cfg = RunConfig::load(global.config.as_deref())?;
    merge!(cfg.seed, global.seed);
    merge!(cfg.workers, global.workers);
    merge!(cfg.pretrain.steps, args.steps);
    merge!(cfg.pretrain.batch, args.batch);
    merge!(cfg.pretrain.lr, args.lr);
    merge!(cfg.pretrain.val_fraction, args.val_fraction);
    merge!(cfg.pretrain.target_val_loss, args.target_val_loss);
    merge!(cfg.pretrain.log_interval, args.log_interval);
    merge!(cfg.model.d_model, args.d_model);
    merge!(cfg.model.n_layers, args.n_layers);
    merge!(cfg.model.n_heads, args.n_heads);
    merge!(cfg.model.d_ff, args.d_ff);
    merge!(cfg.model.context_len, args.context_len);
    merge!(cfg.model.continue_in_normalizer, args.continue_in_normalizer);

    let p = &cfg.pretrain;
    if p.batch == 0 || p.log_interval == 0 {
        bail!(UsageError("batch and log_interval must be positive".into()));
    }
    if !(0.0..1.0).contains(&p.val_fraction) {
        bail!(UsageError("val_fraction must lie in [0, 1)".into()));
    }

    let mut vocab = Vocab::core_alphabet();
    let continuation = vocab.add_continuation().map_err(|e| anyhow::anyhow!("{e}"))?;
    let model_cfg = cfg.model.to_model_config(vocab.size(), Some(continuation));
    model_cfg.validate().map_err(|e| anyhow::anyhow!("invalid model config: {e}"))?;

    let rows: Vec<CorpusRow> = io::read_jsonl(&args.corpus)?;
    if rows.is_empty() {
        bail!("corpus {} holds no examples", args.corpus.display());
    }
    let mut sequences = Vec::with_capacity(rows.len());
    let mut skipped = 0usize;
    for row in &rows {
        let toks = vocab
            .encode(&row.text)
            .map_err(|e| anyhow::anyhow!("corpus example {}: {e}", row.id))?;
        if toks.len() > model_cfg.context_len {
            skipped += 1;
        } else {
            sequences.push(toks);
        }
    }
    if sequences.is_empty() {
        bail!("every corpus example exceeds the context length");
    }
    if skipped > 0 {
        eprintln!("skipped {skipped} corpus examples longer than the context window");
    }

    // Deterministic split: shuffle indices, carve off the validation share.
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut split_rng = SamplerState::new(cfg.seed, stream_id("pretrain-split", &[])).rng();
    for i in (1..order.len()).rev() {
        order.swap(i, split_rng.random_range(0..=i));
    }
    let n_val = ((sequences.len() as f64) * p.val_fraction).ceil() as usize;
    let (val_idx, train_idx) = order.split_at(n_val.min(sequences.len() - 1));
    let take = |idx: &[usize]| -> Vec<Vec<TokenId>> {
        idx.iter().map(|&i| sequences[i].clone()).collect()
    };
    let train: Vec<Vec<TokenId>> = take(train_idx);
    let probe: Vec<Vec<TokenId>> = if val_idx.is_empty() {
        take(&train_idx[..p.val_batch.min(train_idx.len())])
    } else {
        take(&val_idx[..p.val_batch.min(val_idx.len())])
    };

    let mut init_rng = SamplerState::new(cfg.seed, stream_id("model-init", &[])).rng();
    let mut model = Model::<f32>::init(model_cfg, &mut init_rng)
        .map_err(|e| anyhow::anyhow!("model init failed: {e}"))?;
    let mut opt = model.full_optimizer();
    let mut batch_rng = SamplerState::new(cfg.seed, stream_id("pretrain-batch", &[])).rng();

    let eval_probe = |m: &Model<f32>, batch: &[Vec<TokenId>]| -> Result<f64> {
        Ok(m.eval_loss(batch).map_err(|e| anyhow::anyhow!("{e}"))? as f64)
    };

    let train_probe: Vec<Vec<TokenId>> = train[..p.val_batch.min(train.len())].to_vec();
    let mut curve: Vec<(usize, f64, f64)> = Vec::new();
    let initial_train = eval_probe(&model, &train_probe)?;
    let mut val_loss = eval_probe(&model, &probe)?;
    curve.push((0, initial_train, val_loss));

    let mut stopped_early = false;
    for step in 1..=p.steps {
        let batch: Vec<Vec<TokenId>> = (0..p.batch)
            .map(|_| train[batch_rng.random_range(0..train.len())].clone())
            .collect();
        let loss = model
            .pretrain_step(&batch, scheduled_lr(p.lr, step, p.steps), &mut opt)
            .map_err(|e| anyhow::anyhow!("pretraining step {step}: {e}"))? as f64;
        if step % p.log_interval == 0 || step == p.steps {
            val_loss = eval_probe(&model, &probe)?;
            curve.push((step, loss, val_loss));
            if p.target_val_loss > 0.0 && val_loss < p.target_val_loss {
                stopped_early = true;
                break;
            }
        }
    }

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("failed to create {}", args.out.display()))?;
    io::save_checkpoint_file(&args.out.join("model.ckpt"), &model, &vocab)?;
    io::write_text(&args.out.join("losses.csv"), &io::losses_csv(&curve))?;
    cfg.snapshot(&args.out)?;
    let last = curve.last().unwrap();
    println!(
        "pretrained {} steps{}: train loss {} -> {}, val loss {}",
        last.0,
        if stopped_early { " (early stop)" } else { "" },
        initial_train,
        last.1,
        val_loss
    );
    Ok(())
}
