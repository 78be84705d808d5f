//! Token-level clipped surrogate with a k3 KL penalty.

use crate::error::Result;
use crate::model::{
    batch_logprobs, finish_gradient, BatchForward, ParamGroupMask, PolicyParams, PolicySnapshot,
};
use crate::rewards::{AdvantageSet, RewardBreakdown};
use crate::types::{Question, Response};
use crate::vocab::Vocab;

/// Log-ratios beyond this magnitude are clamped and counted.
pub const MAX_LOG_RATIO: f64 = 20.0;

/// One question's rollouts with everything the update needs.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub question: Question,
    pub responses: Vec<Response>,
    /// Per-token log-probabilities under the old policy, one list per response.
    pub old_logprobs: Vec<Vec<f64>>,
    pub rewards: Vec<RewardBreakdown>,
    pub adv: AdvantageSet,
}

/// `min(ρ·A, clip(ρ, 1−ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Derivative of [`clipped_surrogate`] with respect to the log-ratio.
fn surrogate_slope(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    if ratio * advantage <= clipped * advantage {
        advantage * ratio
    } else {
        0.0
    }
}

/// k3 estimator `ρ − ln ρ − 1` with `ln ρ = lp_ref − lp`; non-negative, zero iff equal.
pub fn k3(lp: f64, lp_ref: f64) -> f64 {
    let d = lp_ref - lp;
    (d.exp_m1() - d).max(0.0)
}

#[derive(Debug, Clone)]
pub struct ObjectiveOutput {
    pub objective: f64,
    /// Ascent direction, masked.
    pub gradient: Vec<f64>,
    pub clip_fraction: f64,
    pub mean_kl: f64,
    pub ratio_overflows: usize,
    pub tokens: usize,
}

pub struct ObjectiveSpec<'a> {
    pub epsilon: f64,
    pub beta: f64,
    pub max_len: usize,
    pub mask: &'a ParamGroupMask,
}

/// Clipped objective over all groups, normalized by `|groups| · group_len · max_len`.
pub fn ril_objective(
    params: &PolicyParams,
    vocab: &Vocab,
    reference: &PolicySnapshot,
    groups: &[RolloutGroup],
    spec: &ObjectiveSpec<'_>,
) -> Result<ObjectiveOutput> {
    let group_len = groups.first().map_or(1, |g| g.responses.len());
    let norm = (groups.len() * group_len * spec.max_len) as f64;
    let mut grad = vec![0.0; params.data.len()];
    let mut objective = 0.0;
    let mut tokens = 0usize;
    let mut clipped = 0usize;
    let mut kl_sum = 0.0;
    let mut overflows = 0usize;

    let ctxs: Vec<Vec<usize>> = groups.iter().map(|g| g.question.context(vocab)).collect();
    let contexts: Vec<&[usize]> = ctxs.iter().map(|c| &c[..]).collect();
    let conts: Vec<Vec<&[usize]>> = groups.iter().map(|g| g.responses.iter().map(|r| &r.tokens[..]).collect()).collect();
    let fwd = BatchForward::run(params, &contexts, &conts);
    let refs = if spec.beta > 0.0 {
        batch_logprobs(reference.params(), &contexts, &conts)
    } else {
        conts.iter().map(|c| c.iter().map(|s| vec![0.0; s.len()]).collect()).collect()
    };
    let mut weights = Vec::with_capacity(groups.len());
    for (gi, g) in groups.iter().enumerate() {
        let mut group_weights = Vec::with_capacity(g.responses.len());
        for i in 0..g.responses.len() {
            let adv = g.adv.values[i];
            let lps = fwd.logprobs(gi, i);
            let olds = &g.old_logprobs[i];
            let lp_ref = &refs[gi][i];
            let mut w = Vec::with_capacity(lps.len());
            for (t, &lp) in lps.iter().enumerate() {
                tokens += 1;
                let raw = lp - olds[t];
                let log_ratio = raw.clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO);
                let overflow = raw != log_ratio;
                if overflow {
                    overflows += 1;
                }
                let ratio = log_ratio.exp();
                if ratio < 1.0 - spec.epsilon || ratio > 1.0 + spec.epsilon {
                    clipped += 1;
                }
                let mut value = clipped_surrogate(ratio, adv, spec.epsilon);
                let mut slope = if overflow { 0.0 } else { surrogate_slope(ratio, adv, spec.epsilon) };
                if spec.beta > 0.0 {
                    let kl = k3(lp, lp_ref[t]);
                    kl_sum += kl;
                    value -= spec.beta * kl;
                    slope += spec.beta * (lp_ref[t] - lp).exp_m1();
                }
                objective += value / norm;
                w.push(slope / norm);
            }
            group_weights.push(w);
        }
        weights.push(group_weights);
    }
    fwd.backward(params, &weights, &mut grad);
    if overflows > 0 {
        log::warn!("{overflows} token log-ratios exceeded ±{MAX_LOG_RATIO} and were clamped");
    }
    finish_gradient(params, &mut grad, spec.mask)?;
    Ok(ObjectiveOutput {
        objective,
        gradient: grad,
        clip_fraction: if tokens == 0 { 0.0 } else { clipped as f64 / tokens as f64 },
        mean_kl: if tokens == 0 { 0.0 } else { kl_sum / tokens as f64 },
        ratio_overflows: overflows,
        tokens,
    })
}
