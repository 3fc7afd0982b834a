//! Scalar rewards for judged trajectories: the four-quadrant transition
//! term, format/length/repetition stabilizers, group-relative advantage
//! normalization, and per-stage credit weights.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{FormatFlag, FormatFlags, Quadrant, QuadrantWeights, Solution, Trajectory};

/// Stabilizer penalty configuration: think-format, soft-overlength, and
/// repetition terms. The magnitudes are tunables exposed in config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilizerConfig {
    /// Penalty applied once if the solution misses the think block or has
    /// no parseable final answer.
    pub format_penalty: f64,
    /// Token budget before the soft overlength penalty starts.
    pub overlength_budget: usize,
    /// Penalty per 100% excess over the budget, applied linearly.
    pub overlength_slope: f64,
    /// N-gram size used by the repetition statistic.
    pub repetition_ngram: usize,
    /// Repetition fraction above which the repetition penalty fires.
    pub repetition_threshold: f64,
    pub repetition_penalty: f64,
}

impl Default for StabilizerConfig {
    fn default() -> Self {
        StabilizerConfig {
            format_penalty: -0.5,
            overlength_budget: 4096,
            overlength_slope: -0.5,
            repetition_ngram: 4,
            repetition_threshold: 0.3,
            repetition_penalty: -0.25,
        }
    }
}

impl StabilizerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.format_penalty > 0.0 || self.overlength_slope > 0.0 || self.repetition_penalty > 0.0
        {
            return Err("stabilizer penalties must be nonpositive".into());
        }
        if self.overlength_budget == 0 {
            return Err("overlength_budget must be positive".into());
        }
        if self.repetition_ngram == 0 {
            return Err("repetition_ngram must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.repetition_threshold) {
            return Err(format!(
                "repetition_threshold must be in [0,1], got {}",
                self.repetition_threshold
            ));
        }
        Ok(())
    }
}

/// How much of a trajectory's advantage each stage receives. Primary
/// credit goes to the Critic response by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageWeights {
    pub initial_weight: f64,
    pub critic_weight: f64,
}

impl Default for StageWeights {
    fn default() -> Self {
        StageWeights {
            initial_weight: 0.0,
            critic_weight: 1.0,
        }
    }
}

impl StageWeights {
    pub fn validate(&self) -> Result<(), String> {
        if self.initial_weight < 0.0 || self.critic_weight < 0.0 {
            return Err("stage weights must be nonnegative".into());
        }
        if self.initial_weight == 0.0 && self.critic_weight == 0.0 {
            return Err("stage weights must not both be zero".into());
        }
        Ok(())
    }
}

/// Group-normalized advantages for one question group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAdvantages {
    pub advantages: Vec<f64>,
    pub group_mean: f64,
    /// Population standard deviation of the raw rewards.
    pub group_std: f64,
    /// True when the group had (near-)zero variance; all advantages are 0.
    pub degenerate: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RewardError {
    #[error("group of size {0} is too small to normalize (need >= 2)")]
    GroupTooSmall(usize),
}

/// The transition reward: positive for Correction and Robustness, negative
/// for Sycophancy and Boundary.
pub fn quadrant_reward(q: Quadrant, w: &QuadrantWeights) -> f64 {
    match q {
        Quadrant::Correction => w.w_corr,
        Quadrant::Robustness => w.w_rob,
        Quadrant::Sycophancy => -w.w_syco,
        Quadrant::Boundary => -w.w_boun,
    }
}

/// Maximum fraction of tokens accounted for by any single repeated n-gram.
pub fn repetition_fraction(text: &str, ngram: usize) -> f64 {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if ngram == 0 || tokens.len() < ngram {
        return 0.0;
    }
    let mut counts: std::collections::HashMap<&[&str], usize> = std::collections::HashMap::new();
    for window in tokens.windows(ngram) {
        *counts.entry(window).or_insert(0) += 1;
    }
    counts
        .values()
        .filter(|&&c| c > 1)
        .map(|&c| ((c - 1) * ngram) as f64 / tokens.len() as f64)
        .fold(0.0, f64::max)
}

/// Sum of the format, soft-overlength, and repetition penalties for one
/// solution. Always <= 0.
pub fn stabilizer_penalty(solution: &Solution, flags: &FormatFlags, cfg: &StabilizerConfig) -> f64 {
    let mut penalty = 0.0;
    if flags.contains(&FormatFlag::MissingThinkTags) || flags.contains(&FormatFlag::EmptyFinalAnswer)
    {
        penalty += cfg.format_penalty;
    }
    let tokens = solution.tokens();
    if tokens > cfg.overlength_budget {
        let excess = (tokens - cfg.overlength_budget) as f64 / cfg.overlength_budget as f64;
        penalty += cfg.overlength_slope * excess;
    }
    if repetition_fraction(&solution.text, cfg.repetition_ngram) > cfg.repetition_threshold {
        penalty += cfg.repetition_penalty;
    }
    penalty
}

/// Derived stabilizer flags (overlength, repetitive) for a solution.
pub fn stabilizer_flags(solution: &Solution, cfg: &StabilizerConfig) -> FormatFlags {
    let mut flags = FormatFlags::new();
    if solution.tokens() > cfg.overlength_budget {
        flags.insert(FormatFlag::Overlength);
    }
    if repetition_fraction(&solution.text, cfg.repetition_ngram) > cfg.repetition_threshold {
        flags.insert(FormatFlag::Repetitive);
    }
    flags
}

/// Full scalar reward for one trajectory: quadrant term plus stabilizers.
/// Stabilizers apply only to stages carrying nonzero credit weight, so a
/// stage receiving no credit cannot route penalties into the update.
pub fn trajectory_reward(
    t: &Trajectory,
    w: &QuadrantWeights,
    cfg: &StabilizerConfig,
    sw: &StageWeights,
) -> f64 {
    let mut r = quadrant_reward(t.quadrant, w);
    if sw.initial_weight > 0.0 {
        r += stabilizer_penalty(&t.y0, &t.y0_flags, cfg);
    }
    if sw.critic_weight > 0.0 {
        r += stabilizer_penalty(&t.y1, &t.y1_flags, cfg);
    }
    r
}

/// Normalizes a question group's rewards into zero-mean, unit-scale
/// advantages using the population standard deviation plus `eps`.
/// Zero-variance groups are degenerate and yield all-zero advantages.
pub fn normalize_group(rewards: &[f64], eps: f64) -> Result<GroupAdvantages, RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < eps {
        return Ok(GroupAdvantages {
            advantages: vec![0.0; rewards.len()],
            group_mean: mean,
            group_std: std,
            degenerate: true,
        });
    }
    let advantages = rewards.iter().map(|r| (r - mean) / (std + eps)).collect();
    Ok(GroupAdvantages {
        advantages,
        group_mean: mean,
        group_std: std,
        degenerate: false,
    })
}

/// Splits an advantage into (initial, critic) stage credits.
pub fn stage_credits(advantage: f64, sw: &StageWeights) -> (f64, f64) {
    (advantage * sw.initial_weight, advantage * sw.critic_weight)
}
