//! Group-relative policy optimization of one embedding row.
//!
//! Each optimizer update samples a handful of questions, runs a group of
//! budget-forced rollouts per question, scores them with a binary
//! format-plus-correctness reward, and normalizes rewards within each
//! group into advantages. A clipped importance-ratio surrogate is then
//! optimized for a few inner epochs, with the gradient restricted to the
//! continuation token's embedding row; every other parameter stays
//! bit-frozen.
//!
//! Old log-probabilities are cached once at rollout time through the same
//! teacher-forced scoring path the inner epochs use, so the first inner
//! epoch sees importance ratios of exactly one. Only SAMPLED tokens enter
//! the objective: injected and forced tokens were not policy actions.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::bfdecode::{bf_generate, BFConfig, GenerationTrace};
use crate::eval::{extract_boxed, hybrid_verify, strip_eos, OracleJudge};
use crate::exec::Executor;
use crate::model::{AdamW, Model};
use crate::rng::{stream_id, SamplerState};
use crate::tasks::{render_prompt, TaskRecord};
use crate::vocab::{TokenId, Vocab};
use crate::{Error, Real, Result};

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GrpoConfig {
    /// Rollouts per question (G).
    pub group_size: usize,
    /// Clip width for the importance ratio.
    pub clip_epsilon: f64,
    /// KL coefficient; only 0 is supported.
    pub kl_coefficient: f64,
    /// Inner optimization passes per update.
    pub inner_epochs: usize,
    pub learning_rate: f64,
    /// Cosine-decay horizon in updates.
    pub schedule_horizon: usize,
    /// Rollout and scoring temperature.
    pub temperature: f64,
    pub questions_per_update: usize,
    pub updates: usize,
    /// Budget forcing during rollouts.
    pub c_max: usize,
    pub b_max: usize,
    pub answer_reserve: usize,
    pub system_prompt: String,
    /// Copy this row into the trainable row before training; `None`
    /// keeps the row as-is.
    pub init_from: Option<TokenId>,
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::InvalidConfig("group_size must be at least 2"));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::InvalidConfig("clip_epsilon must lie in (0, 1)"));
        }
        if self.kl_coefficient != 0.0 {
            return Err(Error::Unsupported("kl coefficient must be 0"));
        }
        if self.inner_epochs == 0 || self.updates == 0 || self.questions_per_update == 0 {
            return Err(Error::InvalidConfig("epoch and update counts must be positive"));
        }
        if self.schedule_horizon == 0 {
            return Err(Error::InvalidConfig("schedule_horizon must be positive"));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::InvalidConfig("temperature must be positive"));
        }
        Ok(())
    }
}

/// Reward for one rollout: answer formatting and correctness bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RewardBreakdown {
    pub format_ok: bool,
    pub correct: bool,
}

impl RewardBreakdown {
    /// Total reward in {0, 1, 2}.
    pub fn total(&self) -> u8 {
        self.format_ok as u8 + self.correct as u8
    }
}

/// Correctness oracle for rollouts.
pub trait Verifier: Sync {
    fn accept(&self, question: &str, reference: &str, solution: &str) -> Result<bool>;
}

/// Default verifier: boxed extraction with exact match when present, last
/// integer otherwise.
pub struct TaskVerifier;

impl Verifier for TaskVerifier {
    fn accept(&self, question: &str, reference: &str, solution: &str) -> Result<bool> {
        Ok(hybrid_verify(question, reference, solution, &OracleJudge).correct)
    }
}

/// Scores one rollout's answer phase. Verifier errors count as incorrect.
pub fn reward(
    vocab: &Vocab,
    task: &TaskRecord,
    trace: &GenerationTrace,
    verifier: &dyn Verifier,
) -> RewardBreakdown {
    let answer_ids = strip_eos(trace.answer_tokens(), vocab);
    let answer_text = vocab.decode(&answer_ids).unwrap_or_default();
    RewardBreakdown {
        format_ok: extract_boxed(&answer_text).is_some(),
        correct: verifier
            .accept(&task.question, &task.answer, &answer_text)
            .unwrap_or(false),
    }
}

/// Normalizes rewards within a group: `(r - mean) / std` with the
/// population standard deviation, or all zeros for a degenerate group.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    assert!(rewards.len() >= 2, "groups need at least two rollouts");
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return vec![0.0; rewards.len()];
    }
    let std = libm::sqrt(var);
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// One generated rollout before grouping: the trace, its cached
/// log-probs, the contribution mask, and the reward.
type RolloutCell = (GenerationTrace, Vec<f64>, Vec<bool>, RewardBreakdown);

/// One question's rollouts with everything the surrogate needs.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBatch {
    pub question_id: String,
    pub traces: Vec<GenerationTrace>,
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
    /// Per trace, aligned with its tokens; positions outside the mask
    /// hold 0.
    pub old_logprobs: Vec<Vec<f64>>,
    /// True exactly at SAMPLED positions.
    pub masks: Vec<Vec<bool>>,
}

/// Value of the clipped surrogate over one group or batch of traces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateOutcome {
    /// Negated objective: minimize this.
    pub loss: f64,
    /// Fraction of masked tokens where the clipped branch was strictly
    /// smaller.
    pub clip_fraction: f64,
    pub masked_tokens: usize,
}

/// Per-token pieces of the clipped surrogate.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TokenTerm {
    ratio: f64,
    /// min(ratio*A, clip(ratio)*A).
    value: f64,
    /// The clipped branch was strictly smaller, so the gradient through
    /// the ratio is dead.
    clipped: bool,
}

fn token_term(new_lp: f64, old_lp: f64, advantage: f64, epsilon: f64) -> Result<TokenTerm> {
    let ratio = libm::exp(new_lp - old_lp);
    if !ratio.is_finite() {
        return Err(Error::NonFiniteRatio);
    }
    let clipped_ratio = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    let unclipped = ratio * advantage;
    let clipped = clipped_ratio * advantage;
    if clipped < unclipped {
        Ok(TokenTerm { ratio, value: clipped, clipped: true })
    } else {
        Ok(TokenTerm { ratio, value: unclipped, clipped: false })
    }
}

/// Clipped surrogate loss over a group of traces: the negated mean over
/// masked tokens of `min(ratio*A, clip(ratio)*A)`.
pub fn surrogate_loss(
    new_logprobs: &[Vec<f64>],
    old_logprobs: &[Vec<f64>],
    advantages: &[f64],
    epsilon: f64,
    masks: &[Vec<bool>],
) -> Result<SurrogateOutcome> {
    assert_eq!(new_logprobs.len(), old_logprobs.len());
    assert_eq!(new_logprobs.len(), advantages.len());
    assert_eq!(new_logprobs.len(), masks.len());
    let mut sum = 0.0;
    let mut clipped = 0usize;
    let mut total = 0usize;
    for ((new, old), (&adv, mask)) in new_logprobs
        .iter()
        .zip(old_logprobs)
        .zip(advantages.iter().zip(masks))
    {
        assert_eq!(new.len(), old.len());
        assert_eq!(new.len(), mask.len());
        for t in 0..new.len() {
            if !mask[t] {
                continue;
            }
            let term = token_term(new[t], old[t], adv, epsilon)?;
            sum += term.value;
            clipped += term.clipped as usize;
            total += 1;
        }
    }
    if total == 0 {
        return Ok(SurrogateOutcome { loss: 0.0, clip_fraction: 0.0, masked_tokens: 0 });
    }
    Ok(SurrogateOutcome {
        loss: -sum / total as f64,
        clip_fraction: clipped as f64 / total as f64,
        masked_tokens: total,
    })
}

/// Per-update training metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateMetrics {
    pub update: usize,
    /// Mean total reward over the update's rollouts.
    pub mean_reward: f64,
    pub mean_format: f64,
    pub mean_correct: f64,
    pub mean_abs_advantage: f64,
    /// Mean over inner epochs.
    pub clip_fraction: f64,
    /// Mean surrogate loss over inner epochs.
    pub mean_loss: f64,
    /// L2 norm of the trainable row after the update.
    pub theta_norm: f64,
    pub lr: f64,
}

/// Everything `train_token` produces besides the trained row itself.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub metrics: Vec<UpdateMetrics>,
    /// Mean total reward of every group in chronological order.
    pub group_rewards: Vec<f64>,
}

/// Cosine-decayed learning rate for an update index.
pub fn cosine_lr(base: f64, update: usize, horizon: usize) -> f64 {
    let frac = (update as f64 / horizon as f64).min(1.0);
    base * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * frac))
}

/// Scores a full sequence under the current parameters, densely aligned
/// with the tokens.
fn dense_logprobs<R: Real>(
    model: &Model<R>,
    tokens: &[TokenId],
    mask: &[bool],
    temperature: f64,
) -> Result<Vec<f64>> {
    let lps = model.sequence_logprobs(tokens, mask, R::from_f64(temperature))?;
    Ok(lps
        .into_iter()
        .map(|o| o.map(|v| v.to_f64()).unwrap_or(0.0))
        .collect())
}

/// Draws `count` distinct dataset indices, or with repetition once the
/// dataset is smaller than the request.
fn draw_questions(rng: &mut impl Rng, dataset_len: usize, count: usize) -> Vec<usize> {
    if count >= dataset_len {
        return (0..count).map(|i| i % dataset_len).collect();
    }
    let mut indices: Vec<usize> = (0..dataset_len).collect();
    for i in 0..count {
        let j = rng.random_range(i..dataset_len);
        indices.swap(i, j);
    }
    indices.truncate(count);
    indices
}

struct EpochStats {
    loss: f64,
    clip_fraction: f64,
}

/// One inner optimization pass over an update's groups: recompute
/// log-probs, form surrogate gradients for the trainable row, and apply
/// one AdamW step.
fn inner_epoch<R: Real, E: Executor>(
    model: &mut Model<R>,
    groups: &[GroupBatch],
    cfg: &GrpoConfig,
    lr: f64,
    opt: &mut AdamW<R>,
    row: TokenId,
    exec: &E,
) -> Result<EpochStats> {
    let (epsilon, temperature) = (cfg.clip_epsilon, cfg.temperature);
    let flat: Vec<(usize, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, grp)| (0..grp.traces.len()).map(move |i| (g, i)))
        .collect();

    let frozen: &Model<R> = model;
    let new_lps: Result<Vec<Vec<f64>>> = exec
        .map_indexed(flat.len(), |k| {
            let (g, i) = flat[k];
            dense_logprobs(frozen, &groups[g].traces[i].tokens, &groups[g].masks[i], temperature)
        })
        .into_iter()
        .collect();
    let new_lps = new_lps?;

    // Flat mean over every masked token in the update.
    let total_masked: usize = groups
        .iter()
        .flat_map(|g| g.masks.iter())
        .map(|m| m.iter().filter(|&&b| b).count())
        .sum();
    if total_masked == 0 {
        return Ok(EpochStats { loss: 0.0, clip_fraction: 0.0 });
    }

    let mut sum_terms = 0.0;
    let mut clipped = 0usize;
    let mut weights: Vec<Vec<R>> = Vec::with_capacity(flat.len());
    for (k, &(g, i)) in flat.iter().enumerate() {
        let grp = &groups[g];
        let adv = grp.advantages[i];
        let mask = &grp.masks[i];
        let mut w = vec![R::default(); mask.len()];
        for t in 0..mask.len() {
            if !mask[t] {
                continue;
            }
            let term = token_term(new_lps[k][t], grp.old_logprobs[i][t], adv, epsilon)?;
            sum_terms += term.value;
            clipped += term.clipped as usize;
            if !term.clipped {
                // d/dθ of -ratio*A/N through new_lp: weight for the
                // log-prob gradient is -A*ratio/N; clipped tokens are a
                // constant, so they contribute nothing.
                w[t] = R::from_f64(-adv * term.ratio / total_masked as f64);
            }
        }
        weights.push(w);
    }

    let frozen: &Model<R> = model;
    let grads: Result<Vec<Vec<R>>> = exec
        .map_indexed(flat.len(), |k| {
            let (g, i) = flat[k];
            frozen.grad_wrt_row(
                &groups[g].traces[i].tokens,
                &weights[k],
                R::from_f64(temperature),
            )
        })
        .into_iter()
        .collect();
    let grads = grads?;

    let d = model.config.d_model;
    let mut grad = vec![R::default(); d];
    for g in &grads {
        for (acc, &x) in grad.iter_mut().zip(g) {
            *acc = *acc + x;
        }
    }

    let start = row as usize * d;
    let mut row_vec: Vec<R> = model.params.tok_emb[start..start + d].to_vec();
    opt.step(&mut [&mut row_vec], &[&grad], lr);
    model.params.tok_emb[start..start + d].copy_from_slice(&row_vec);

    Ok(EpochStats {
        loss: -sum_terms / total_masked as f64,
        clip_fraction: clipped as f64 / total_masked as f64,
    })
}

/// Trains the continuation row with GRPO over budget-forced rollouts.
/// Every parameter outside that row is left bit-identical.
pub fn train_token<R: Real, E: Executor>(
    model: &mut Model<R>,
    vocab: &Vocab,
    dataset: &[TaskRecord],
    cfg: &GrpoConfig,
    verifier: &dyn Verifier,
    seed: u64,
    exec: &E,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("training needs a non-empty dataset"));
    }
    let row = model
        .config
        .continuation
        .ok_or(Error::InvalidConfig("model has no continuation token"))?;
    if let Some(src) = cfg.init_from {
        model.copy_embedding_row(src, row)?;
    }
    let injection = vec![row];
    let bf = BFConfig {
        c_max: cfg.c_max,
        b_max: cfg.b_max,
        answer_reserve: cfg.answer_reserve,
        injection,
        temperature: cfg.temperature,
    };

    let d = model.config.d_model;
    let mut opt = AdamW::<R>::new(&[d]);
    let mut metrics = Vec::with_capacity(cfg.updates);
    let mut group_rewards = Vec::with_capacity(cfg.updates * cfg.questions_per_update);

    for update in 0..cfg.updates {
        let mut qrng =
            SamplerState::new(seed, stream_id("questions", &[update as u64])).rng();
        let chosen = draw_questions(&mut qrng, dataset.len(), cfg.questions_per_update);

        let frozen: &Model<R> = model;
        let cells = cfg.questions_per_update * cfg.group_size;
        let rollouts: Result<Vec<RolloutCell>> =
            exec.map_indexed(cells, |idx| {
                let slot = idx / cfg.group_size;
                let g = idx % cfg.group_size;
                let task = &dataset[chosen[slot]];
                let prompt =
                    vocab.encode(&render_prompt(&cfg.system_prompt, &task.question))?;
                let sampler = SamplerState::new(
                    seed,
                    stream_id("rollout", &[update as u64, slot as u64, g as u64]),
                );
                let trace = bf_generate(frozen, vocab, &prompt, &bf, sampler)?;
                let mask = trace.sampled_mask();
                let old = dense_logprobs(frozen, &trace.tokens, &mask, cfg.temperature)?;
                let rew = reward(vocab, task, &trace, verifier);
                Ok((trace, old, mask, rew))
            })
            .into_iter()
            .collect();
        let mut rollouts = rollouts?;

        let mut groups = Vec::with_capacity(cfg.questions_per_update);
        for slot in (0..cfg.questions_per_update).rev() {
            let tail = rollouts.split_off(slot * cfg.group_size);
            let mut traces = Vec::with_capacity(cfg.group_size);
            let mut old_logprobs = Vec::with_capacity(cfg.group_size);
            let mut masks = Vec::with_capacity(cfg.group_size);
            let mut rewards = Vec::with_capacity(cfg.group_size);
            for (trace, old, mask, rew) in tail {
                traces.push(trace);
                old_logprobs.push(old);
                masks.push(mask);
                rewards.push(rew);
            }
            let totals: Vec<f64> = rewards.iter().map(|r| r.total() as f64).collect();
            groups.push(GroupBatch {
                question_id: dataset[chosen[slot]].id.clone(),
                traces,
                rewards,
                advantages: group_advantages(&totals),
                old_logprobs,
                masks,
            });
        }
        groups.reverse();

        for grp in &groups {
            let mean =
                grp.rewards.iter().map(|r| r.total() as f64).sum::<f64>() / grp.rewards.len() as f64;
            group_rewards.push(mean);
        }

        let lr = cosine_lr(cfg.learning_rate, update, cfg.schedule_horizon);
        let mut loss_sum = 0.0;
        let mut clip_sum = 0.0;
        for _ in 0..cfg.inner_epochs {
            let stats = inner_epoch(model, &groups, cfg, lr, &mut opt, row, exec)?;
            loss_sum += stats.loss;
            clip_sum += stats.clip_fraction;
        }

        let n_rollouts = (cfg.questions_per_update * cfg.group_size) as f64;
        let all_rewards = groups.iter().flat_map(|g| g.rewards.iter());
        let mean_reward =
            all_rewards.clone().map(|r| r.total() as f64).sum::<f64>() / n_rollouts;
        let mean_format =
            all_rewards.clone().filter(|r| r.format_ok).count() as f64 / n_rollouts;
        let mean_correct = all_rewards.filter(|r| r.correct).count() as f64 / n_rollouts;
        let mean_abs_advantage = groups
            .iter()
            .flat_map(|g| g.advantages.iter())
            .map(|a| a.abs())
            .sum::<f64>()
            / n_rollouts;
        let start = row as usize * d;
        let theta_norm = libm::sqrt(
            model.params.tok_emb[start..start + d]
                .iter()
                .map(|&x| x.to_f64() * x.to_f64())
                .sum::<f64>(),
        );
        metrics.push(UpdateMetrics {
            update,
            mean_reward,
            mean_format,
            mean_correct,
            mean_abs_advantage,
            clip_fraction: clip_sum / cfg.inner_epochs as f64,
            mean_loss: loss_sum / cfg.inner_epochs as f64,
            theta_norm,
            lr,
        });
    }

    Ok(TrainOutcome { metrics, group_rewards })
}
