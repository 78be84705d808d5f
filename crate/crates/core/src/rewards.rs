//! Composite rewards and group-relative advantages.

use serde::{Deserialize, Serialize};

use crate::config::AdvantageVariant;
use crate::discriminator::{disc_scores, DiscParams};
use crate::error::Result;
use crate::judge::Judge;
use crate::types::{Question, Response};
use crate::vocab::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub similarity: f64,
    pub answer: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn new(similarity: f64, answer: f64) -> Self {
        Self {
            similarity,
            answer,
            total: similarity + answer,
        }
    }
}

/// Maps a discriminator score to a similarity reward.
///
/// `levels = 2` is the indicator `score < 0.5`; `levels = L > 2` rounds
/// `1 − score` onto `{0, 1/(L−1), …, 1}`; `levels = 0` returns `1 − score`.
pub fn similarity_reward(score: f64, levels: u32) -> f64 {
    match levels {
        0 => 1.0 - score,
        2 => {
            if score < 0.5 {
                1.0
            } else {
                0.0
            }
        }
        l => {
            let steps = (l - 1) as f64;
            ((1.0 - score) * steps).round() / steps
        }
    }
}

/// Rewards for every response in a group plus the raw discriminator scores.
#[derive(Debug, Clone)]
pub struct ScoredGroup {
    pub rewards: Vec<RewardBreakdown>,
    pub disc_scores: Option<Vec<f64>>,
}

/// Scores all responses of one question with the discriminator (when present)
/// and the judge. A missing discriminator or a `None` judge contribute zero.
pub fn score_group(
    vocab: &Vocab,
    disc: Option<&DiscParams>,
    disc_max_len: usize,
    sim_levels: u32,
    judge: &Judge,
    question: &Question,
    responses: &[Response],
) -> Result<ScoredGroup> {
    let scores = disc.map(|d| disc_scores(d, vocab, question, responses, disc_max_len));
    let texts: Vec<&str> = responses.iter().map(|r| r.text.as_str()).collect();
    let flags = judge.correct_flags(question, &texts)?;
    let rewards = (0..responses.len())
        .map(|i| {
            let sim = scores.as_ref().map_or(0.0, |s| similarity_reward(s[i], sim_levels));
            let ans = if flags[i] { 1.0 } else { 0.0 };
            RewardBreakdown::new(sim, ans)
        })
        .collect();
    Ok(ScoredGroup {
        rewards,
        disc_scores: scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSet {
    pub values: Vec<f64>,
    pub variant: AdvantageVariant,
}

/// Group-relative advantages. Groups whose rewards are all equal get zeros.
pub fn advantages(rewards: &[f64], variant: AdvantageVariant) -> AdvantageSet {
    assert!(!rewards.is_empty(), "advantages need at least one reward");
    let n = rewards.len() as f64;
    if rewards.iter().all(|&r| r == rewards[0]) {
        return AdvantageSet {
            values: vec![0.0; rewards.len()],
            variant,
        };
    }
    let mean = rewards.iter().sum::<f64>() / n;
    let centered: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
    let values = match variant {
        AdvantageVariant::DrGrpo => centered,
        AdvantageVariant::Grpo => {
            let std = (centered.iter().map(|c| c * c).sum::<f64>() / n).sqrt();
            centered.iter().map(|c| c / std).collect()
        }
    };
    AdvantageSet { values, variant }
}
