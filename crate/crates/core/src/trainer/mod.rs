//! Supervised warm-up, RL-only and RIL training loops.

mod objective;
pub mod optimizer;

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{DiscMode, JudgeMode, LinearSchedule, OptimizerConfig, ParamGroup, TrainConfig};
use crate::discriminator::{disc_loss_and_grad, DiscExample, DiscParams, DiscTrainer};
use crate::error::{Error, Result};
use crate::harness::evaluate;
use crate::judge::Judge;
use crate::model::{
    batch_logprobs, context_state, continuation_logprobs, policy_grad, sample_group, ParamGroupMask, PolicyParams, PolicySnapshot,
    SnapshotRole, WeightedGroup,
};
use crate::rewards::{advantages, score_group};
use crate::rng::{rng_stream, Rng};
use crate::tasks::{extract_group, TeacherCache};
use crate::types::{Question, Response};
use crate::vocab::Vocab;

pub use objective::{clipped_surrogate, k3, ril_objective, ObjectiveOutput, ObjectiveSpec, RolloutGroup, MAX_LOG_RATIO};
pub use optimizer::OptimizerState;

/// One record per training iteration. Field order is the log's key order.
///
/// Reward means are over the student's own samples; teacher-side means are
/// reported separately (they are `None` for RL-only runs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iter: usize,
    pub responses_scored: usize,
    pub mean_similarity_reward: f64,
    pub mean_answer_reward: f64,
    pub teacher_similarity_reward: Option<f64>,
    pub teacher_answer_reward: Option<f64>,
    pub disc_objective: Option<f64>,
    pub disc_accuracy: Option<f64>,
    pub policy_objective: f64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub ratio_overflows: usize,
    pub eval_accuracy: Option<f64>,
    /// Seconds since the loop started. Kept out of the log so logs stay
    /// byte-identical across runs; the harness writes it to a timing file.
    #[serde(skip)]
    pub wall_time: f64,
}

/// Mean token cross-entropy of `target` given each question's prompt.
pub fn sft_loss(params: &PolicyParams, vocab: &Vocab, dataset: &[(Question, Response)]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (q, r) in dataset {
        let lps = continuation_logprobs(params, &q.context(vocab), &[&r.tokens]);
        total -= lps[0].iter().sum::<f64>();
        count += r.tokens.len();
    }
    total / count.max(1) as f64
}

/// Plain-style SFT targets: the bare answer.
pub fn sft_dataset(vocab: &Vocab, questions: &[Question], max_len: usize) -> Result<Vec<(Question, Response)>> {
    questions
        .iter()
        .map(|q| Ok((q.clone(), Response::from_text(vocab, &q.answer_text, crate::types::Source::Student, max_len)?)))
        .collect()
}

/// Mean token log-likelihood of the targets and its exact, masked gradient.
pub fn sft_objective(
    params: &PolicyParams,
    vocab: &Vocab,
    examples: &[&(Question, Response)],
    mask: &ParamGroupMask,
) -> Result<(f64, Vec<f64>)> {
    let tokens: usize = examples.iter().map(|(_, r)| r.tokens.len()).sum();
    let w = 1.0 / tokens.max(1) as f64;
    let groups: Vec<WeightedGroup<'_>> = examples
        .iter()
        .map(|(q, r)| WeightedGroup {
            context: q.context(vocab),
            sequences: vec![(&r.tokens[..], vec![w; r.tokens.len()])],
        })
        .collect();
    policy_grad(params, &groups, mask)
}

pub struct SftSpec<'a> {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: LinearSchedule,
    pub optimizer: OptimizerConfig,
    pub mask: &'a ParamGroupMask,
}

/// Token-level cross-entropy minimization with AdamW, shuffled minibatches.
pub fn sft(
    mut params: PolicyParams,
    vocab: &Vocab,
    dataset: &[(Question, Response)],
    spec: &SftSpec<'_>,
    rng: &mut Rng,
) -> Result<PolicyParams> {
    assert!(!dataset.is_empty(), "sft needs a non-empty dataset");
    let batch = spec.batch_size.max(1);
    let per_epoch = dataset.len().div_ceil(batch);
    let total = spec.epochs * per_epoch;
    let mut opt = OptimizerState::new(params.data.len(), spec.optimizer.clone()).with_frozen(frozen_ranges(&params, spec.mask));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0;
    for _ in 0..spec.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            let examples: Vec<&(Question, Response)> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (_, grad) = sft_objective(&params, vocab, &examples, spec.mask)?;
            opt.ascend(&mut params.data, &grad, spec.lr.at(step, total));
            step += 1;
        }
    }
    Ok(params)
}

fn frozen_ranges(params: &PolicyParams, mask: &ParamGroupMask) -> Vec<std::ops::Range<usize>> {
    [ParamGroup::Embed, ParamGroup::Recurrent, ParamGroup::Head]
        .into_iter()
        .filter(|g| !mask.allows(*g))
        .flat_map(|g| params.layout.group_ranges(g))
        .collect()
}

/// Everything a training loop reads but never mutates.
pub struct TrainContext<'a> {
    pub config: &'a TrainConfig,
    pub vocab: &'a Vocab,
    pub tasks: &'a [Question],
    /// Evaluated every `eval_every` iterations and after the last one.
    pub heldout: &'a [Question],
    pub judge: &'a Judge,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub disc: Option<DiscParams>,
    pub metrics: Vec<IterationMetrics>,
    /// Policy optimizer steps taken.
    pub policy_steps: u64,
}

/// Called after every iteration with the fresh metrics and current weights.
pub type Observer<'o> = dyn FnMut(&IterationMetrics, &PolicyParams, Option<&DiscParams>) -> Result<()> + 'o;

/// RL-only loop: student groups of `G`, judge rewards only.
pub fn train_rl(ctx: &TrainContext<'_>, params: PolicyParams, observer: &mut Observer<'_>) -> Result<TrainOutcome> {
    if ctx.config.judge.mode == JudgeMode::None {
        return Err(Error::Config("RL-only training needs a judge".into()));
    }
    run_loop(ctx, params, None, None, observer)
}

/// RIL loop: student groups of `G` plus `G` cached teacher responses,
/// discriminator similarity plus judge answer rewards.
pub fn train_ril(
    ctx: &TrainContext<'_>,
    params: PolicyParams,
    disc: Option<DiscParams>,
    cache: &TeacherCache,
    observer: &mut Observer<'_>,
) -> Result<TrainOutcome> {
    if let Some(q) = ctx.tasks.iter().find(|q| !cache.contains(q.id)) {
        return Err(Error::MissingTeacherResponses(q.id));
    }
    let disc = match ctx.config.disc_mode {
        DiscMode::Absent => None,
        _ => Some(disc.ok_or_else(|| Error::Config("discriminator required unless disc_mode = absent".into()))?),
    };
    run_loop(ctx, params, disc, Some(cache), observer)
}

/// Shared loop. `teachers = None` drops teacher extraction entirely, which
/// together with `disc = None` is exactly the RL-only algorithm.
pub fn run_loop(
    ctx: &TrainContext<'_>,
    mut params: PolicyParams,
    disc: Option<DiscParams>,
    teachers: Option<&TeacherCache>,
    observer: &mut Observer<'_>,
) -> Result<TrainOutcome> {
    let cfg = ctx.config;
    assert!(!ctx.tasks.is_empty(), "training needs tasks");
    let start = Instant::now();
    let mask = ParamGroupMask::from_groups(&cfg.trainable_groups);
    let reference = PolicySnapshot::new(SnapshotRole::Reference, &params);
    let mut opt = OptimizerState::new(params.data.len(), cfg.optimizer.clone()).with_frozen(frozen_ranges(&params, &mask));
    let mut disc = disc.map(|d| DiscTrainer::new(d, cfg.optimizer.clone(), cfg.disc_max_len));
    let online = cfg.disc_mode == DiscMode::Online;
    let g = cfg.group_size;
    let spec = ObjectiveSpec {
        epsilon: cfg.epsilon,
        beta: cfg.beta,
        max_len: cfg.max_len,
        mask: &mask,
    };

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut epoch = 0u64;
    let mut metrics = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        // batch selection: epoch-wise shuffles of the task list
        let mut batch: Vec<&Question> = Vec::with_capacity(cfg.batch_questions);
        while batch.len() < cfg.batch_questions.min(ctx.tasks.len()) {
            if cursor == order.len() {
                order = (0..ctx.tasks.len()).collect();
                order.shuffle(&mut rng_stream(ctx.seed, "batch", epoch));
                epoch += 1;
                cursor = 0;
            }
            batch.push(&ctx.tasks[order[cursor]]);
            cursor += 1;
        }

        let old = PolicySnapshot::new(SnapshotRole::OldPolicy, &params);
        let rollout_tag = format!("rollout/{it}");
        let teacher_tag = format!("teacher/{it}");
        let mut groups: Vec<(Question, Vec<Response>)> = Vec::with_capacity(batch.len());
        for q in &batch {
            let mut rng = rng_stream(ctx.seed, &rollout_tag, q.id);
            let h0 = context_state(old.params(), &q.context(ctx.vocab));
            let mut responses = sample_group(old.params(), ctx.vocab, &h0, g, &cfg.sampling, cfg.max_len, &mut rng);
            if let Some(cache) = teachers {
                let mut trng = rng_stream(ctx.seed, &teacher_tag, q.id);
                responses.extend(extract_group(cache, q.id, g, cfg.teacher_mix, &mut trng)?);
            }
            groups.push(((*q).clone(), responses));
        }

        let (mut disc_objective, mut disc_accuracy) = (None, None);
        if let Some(d) = disc.as_mut() {
            let examples: Vec<DiscExample<'_>> = groups
                .iter()
                .flat_map(|(q, rs)| rs.iter().map(move |r| DiscExample::new(q, r)))
                .collect();
            if online {
                let lr = cfg.disc_lr.at(it, cfg.iterations);
                for k in 0..cfg.mu {
                    let out = d.step(ctx.vocab, &examples, lr)?;
                    if k == 0 {
                        disc_objective = Some(out.objective);
                        disc_accuracy = Some(out.accuracy);
                    }
                }
            } else {
                let out = disc_loss_and_grad(&d.params, ctx.vocab, &examples, cfg.disc_max_len)?;
                disc_objective = Some(out.objective);
                disc_accuracy = Some(out.accuracy);
            }
        }

        let mut rollouts = Vec::with_capacity(groups.len());
        let (mut s_sim, mut s_ans, mut t_sim, mut t_ans) = (0.0, 0.0, 0.0, 0.0);
        for (q, responses) in groups {
            let scored = score_group(
                ctx.vocab,
                disc.as_ref().map(|d| &d.params),
                cfg.disc_max_len,
                cfg.sim_levels,
                ctx.judge,
                &q,
                &responses,
            )?;
            for (i, r) in scored.rewards.iter().enumerate() {
                if i < g {
                    s_sim += r.similarity;
                    s_ans += r.answer;
                } else {
                    t_sim += r.similarity;
                    t_ans += r.answer;
                }
            }
            let totals: Vec<f64> = scored.rewards.iter().map(|r| r.total).collect();
            let adv = advantages(&totals, cfg.variant);
            rollouts.push(RolloutGroup {
                question: q,
                responses,
                old_logprobs: Vec::new(),
                rewards: scored.rewards,
                adv,
            });
        }
        let ctxs: Vec<Vec<usize>> = rollouts.iter().map(|r| r.question.context(ctx.vocab)).collect();
        let contexts: Vec<&[usize]> = ctxs.iter().map(|c| &c[..]).collect();
        let conts: Vec<Vec<&[usize]>> = rollouts.iter().map(|r| r.responses.iter().map(|x| &x.tokens[..]).collect()).collect();
        let olds = batch_logprobs(old.params(), &contexts, &conts);
        for (r, old_logprobs) in rollouts.iter_mut().zip(olds) {
            r.old_logprobs = old_logprobs;
        }

        let lr = cfg.policy_lr.at(it, cfg.iterations);
        let mut first: Option<ObjectiveOutput> = None;
        for _ in 0..cfg.mu {
            let out = ril_objective(&params, ctx.vocab, &reference, &rollouts, &spec)?;
            opt.ascend(&mut params.data, &out.gradient, lr);
            first.get_or_insert(out);
        }
        let first = first.expect("mu >= 1");

        let last = it + 1 == cfg.iterations;
        let eval_accuracy = if !ctx.heldout.is_empty() && (last || (cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0)) {
            Some(evaluate(&params, ctx.vocab, ctx.heldout, cfg.max_len))
        } else {
            None
        };
        let n_student = (rollouts.len() * g) as f64;
        let m = IterationMetrics {
            iter: it,
            responses_scored: rollouts.iter().map(|r| r.responses.len()).sum(),
            mean_similarity_reward: s_sim / n_student,
            mean_answer_reward: s_ans / n_student,
            teacher_similarity_reward: teachers.map(|_| t_sim / n_student),
            teacher_answer_reward: teachers.map(|_| t_ans / n_student),
            disc_objective,
            disc_accuracy,
            policy_objective: first.objective,
            mean_kl: first.mean_kl,
            clip_fraction: first.clip_fraction,
            ratio_overflows: first.ratio_overflows,
            eval_accuracy,
            wall_time: start.elapsed().as_secs_f64(),
        };
        observer(&m, &params, disc.as_ref().map(|d| &d.params))?;
        metrics.push(m);
    }
    Ok(TrainOutcome {
        params,
        disc: disc.map(|d| d.params),
        metrics,
        policy_steps: opt.step,
    })
}
