//! Desk-scale training loop: grouped rollouts from a parametric toy
//! policy, transition rewards, group-normalized advantages, and a clipped
//! policy-gradient update with a reference KL penalty.
//!
//! The toy policy's learnable surface is only the keep/switch decision
//! after feedback; its knowledge (initial skill, fix probability) is held
//! fixed so improvements are attributable to interaction behavior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::judge::judge_pair;
use crate::metrics::{compute_metrics, transition_matrix, TransitionMatrix};
use crate::reward::{
    normalize_group, stage_credits, trajectory_reward, RewardError, StabilizerConfig, StageWeights,
};
use crate::rollout::TemplateCatalog;
use crate::types::{
    AnswerOption, Attitude, FeedbackTemplate, QAItem, Quadrant, QuadrantWeights, Solution, Stage,
    Trajectory,
};

/// Noisy observation of the Initial solution's correctness, as seen by the
/// keep/switch policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfidenceBin {
    LikelyRight,
    LikelyWrong,
}

impl ConfidenceBin {
    pub fn index(self) -> usize {
        match self {
            ConfidenceBin::LikelyRight => 0,
            ConfidenceBin::LikelyWrong => 1,
        }
    }
}

/// Parametric stand-in for the LLM policy. `keep_logits` is the only
/// learnable surface; `skill`, `fix_prob`, and `obs_accuracy` are
/// environment constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyPolicy {
    /// Probability the Initial answer is correct.
    pub skill: f64,
    /// Probability a switch away from a wrong answer lands on the gold one.
    pub fix_prob: f64,
    /// Probability the confidence bin reflects true Initial correctness.
    pub obs_accuracy: f64,
    /// Keep/switch logits indexed by [attitude][confidence bin].
    pub keep_logits: [[f64; 2]; 3],
}

impl Default for ToyPolicy {
    fn default() -> Self {
        ToyPolicy {
            skill: 0.7,
            fix_prob: 0.5,
            obs_accuracy: 0.85,
            keep_logits: [[0.0; 2]; 3],
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ToyPolicy {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("skill", self.skill),
            ("fix_prob", self.fix_prob),
            ("obs_accuracy", self.obs_accuracy),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must lie in [0,1], got {v}"));
            }
        }
        Ok(())
    }

    pub fn keep_prob(&self, attitude: Attitude, bin: ConfidenceBin) -> f64 {
        sigmoid(self.keep_logits[attitude.index()][bin.index()])
    }

    /// P(KEEP | LikelyRight), averaged over attitudes.
    pub fn p_keep_likely_right(&self) -> f64 {
        Attitude::ALL
            .iter()
            .map(|&a| self.keep_prob(a, ConfidenceBin::LikelyRight))
            .sum::<f64>()
            / 3.0
    }

    /// P(KEEP | LikelyWrong), averaged over attitudes.
    pub fn p_keep_likely_wrong(&self) -> f64 {
        Attitude::ALL
            .iter()
            .map(|&a| self.keep_prob(a, ConfidenceBin::LikelyWrong))
            .sum::<f64>()
            / 3.0
    }
}

/// The keep/switch action taken at one cell, with its behavior logprob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub attitude: Attitude,
    pub bin: ConfidenceBin,
    pub kept: bool,
    pub logprob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    TransitionAware,
    FinalAnswerOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpdateConfig {
    pub group_size: usize,
    pub learning_rate: f64,
    pub clip_epsilon: f64,
    pub kl_coefficient: f64,
    pub reward_mode: RewardMode,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        UpdateConfig {
            group_size: 4,
            learning_rate: 0.05,
            clip_epsilon: 0.2,
            kl_coefficient: 0.01,
            reward_mode: RewardMode::TransitionAware,
        }
    }
}

impl UpdateConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.group_size < 2 {
            return Err(format!("group_size must be >= 2, got {}", self.group_size));
        }
        if !(self.learning_rate > 0.0) {
            return Err("learning_rate must be positive".into());
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(format!("clip_epsilon must lie in (0,1), got {}", self.clip_epsilon));
        }
        if self.kl_coefficient < 0.0 {
            return Err("kl_coefficient must be nonnegative".into());
        }
        Ok(())
    }
}

/// Running tally of quadrants across all processed trajectories (the
/// transition counter accumulated over training).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionCounter {
    pub correction: usize,
    pub robustness: usize,
    pub sycophancy: usize,
    pub boundary: usize,
}

impl TransitionCounter {
    pub fn record(&mut self, q: Quadrant) {
        match q {
            Quadrant::Correction => self.correction += 1,
            Quadrant::Robustness => self.robustness += 1,
            Quadrant::Sycophancy => self.sycophancy += 1,
            Quadrant::Boundary => self.boundary += 1,
        }
    }

    pub fn merge(&mut self, other: &TransitionCounter) {
        self.correction += other.correction;
        self.robustness += other.robustness;
        self.sycophancy += other.sycophancy;
        self.boundary += other.boundary;
    }

    pub fn total(&self) -> usize {
        self.correction + self.robustness + self.sycophancy + self.boundary
    }

    /// (Correction - Sycophancy) / total; the exact Gain identity on counts.
    pub fn gain(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.correction as f64 - self.sycophancy as f64) / self.total() as f64
    }

    pub fn as_matrix(&self) -> TransitionMatrix {
        TransitionMatrix {
            n00: self.boundary,
            n01: self.correction,
            n10: self.sycophancy,
            n11: self.robustness,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("group has {got} trajectories, configured group size is {expected}")]
    GroupShapeError { expected: usize, got: usize },
    #[error("steps must be >= 1")]
    ZeroSteps,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// Per-update loss diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub surrogate: f64,
    pub kl: f64,
    /// Fraction of trajectories whose importance ratio hit the clip range.
    pub clip_fraction: f64,
    pub min_clipped_ratio: f64,
    pub max_clipped_ratio: f64,
}

/// Samples one interaction from the toy policy: Initial correctness from
/// `skill`, a keep/switch decision at the observed (attitude, confidence)
/// cell, and synthetic well-formed solution texts so the judge path runs
/// end to end.
pub fn toy_policy_rollout(
    policy: &ToyPolicy,
    item: &QAItem,
    feedback: &FeedbackTemplate,
    group_index: usize,
    rng: &mut impl Rng,
) -> (Trajectory, ActionRecord) {
    let s0 = rng.gen_bool(policy.skill);
    let observed_matches = rng.gen_bool(policy.obs_accuracy);
    let bin = match (s0, observed_matches) {
        (true, true) | (false, false) => ConfidenceBin::LikelyRight,
        _ => ConfidenceBin::LikelyWrong,
    };
    let p_keep = policy.keep_prob(feedback.attitude, bin);
    let kept = rng.gen_bool(p_keep);
    let logprob = if kept { p_keep.max(1e-12).ln() } else { (1.0 - p_keep).max(1e-12).ln() };
    let s1 = if kept {
        s0
    } else if s0 {
        false
    } else {
        rng.gen_bool(policy.fix_prob)
    };

    let y0_letters = answer_letters(item, s0, 0);
    let y1_letters = if kept {
        y0_letters.clone()
    } else {
        // A switched wrong answer lands on a different wrong option.
        answer_letters(item, s1, 1)
    };
    let y0 = Solution::new(
        format!("<think>initial assessment of the options</think>\n{y0_letters}"),
        Stage::Initial,
    );
    let y1 = Solution::new(
        format!("<think>reconsidering after the feedback</think>\n{y1_letters}"),
        Stage::Critic,
    );
    let (pair, f0, f1) = judge_pair(item, &y0, &y1);
    debug_assert_eq!((pair.s0, pair.s1), (s0, s1));
    let trajectory = Trajectory::new(
        item.id.clone(),
        group_index,
        y0,
        feedback.clone(),
        y1,
        pair,
        false,
        f0,
        f1,
    )
    .expect("non-tail trajectory is always legal");
    (
        trajectory,
        ActionRecord { attitude: feedback.attitude, bin, kept, logprob },
    )
}

/// Gold letters when correct, otherwise a wrong option label.
fn answer_letters(item: &QAItem, correct: bool, variant: usize) -> String {
    if correct {
        return item.gold.iter().collect();
    }
    let non_gold: Vec<char> = item
        .option_labels()
        .into_iter()
        .filter(|c| !item.gold.contains(c))
        .collect();
    if non_gold.is_empty() {
        "Z".to_string()
    } else {
        non_gold[variant % non_gold.len()].to_string()
    }
}

fn reward_for(
    t: &Trajectory,
    mode: RewardMode,
    weights: &QuadrantWeights,
    stabilizers: &StabilizerConfig,
    stage_weights: &StageWeights,
) -> f64 {
    match mode {
        RewardMode::TransitionAware => trajectory_reward(t, weights, stabilizers, stage_weights),
        RewardMode::FinalAnswerOnly => {
            if t.pair.s1 {
                1.0
            } else {
                -1.0
            }
        }
    }
}

const GROUP_NORM_EPS: f64 = 1e-6;

/// One clipped policy-gradient step with reference KL penalty over a
/// minibatch of question groups. Only `keep_logits` moves.
#[allow(clippy::too_many_arguments)]
pub fn recrit_update(
    policy: &mut ToyPolicy,
    minibatch: &[Vec<(Trajectory, ActionRecord)>],
    cfg: &UpdateConfig,
    weights: &QuadrantWeights,
    stabilizers: &StabilizerConfig,
    stage_weights: &StageWeights,
    reference: &ToyPolicy,
) -> Result<(TransitionCounter, LossReport), TrainerError> {
    for group in minibatch {
        if group.len() != cfg.group_size {
            return Err(TrainerError::GroupShapeError {
                expected: cfg.group_size,
                got: group.len(),
            });
        }
    }
    let mut counter = TransitionCounter::default();
    let mut grad = [[0.0f64; 2]; 3];
    let mut report = LossReport {
        min_clipped_ratio: f64::INFINITY,
        max_clipped_ratio: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut total = 0usize;
    let mut clipped = 0usize;

    for group in minibatch {
        let rewards: Vec<f64> = group
            .iter()
            .map(|(t, _)| reward_for(t, cfg.reward_mode, weights, stabilizers, stage_weights))
            .collect();
        let advantages = normalize_group(&rewards, GROUP_NORM_EPS)?;
        for ((t, rec), &adv) in group.iter().zip(&advantages.advantages) {
            counter.record(t.quadrant);
            total += 1;
            let (ai, bi) = (rec.attitude.index(), rec.bin.index());
            let p = sigmoid(policy.keep_logits[ai][bi]).clamp(1e-9, 1.0 - 1e-9);
            let logp_new = if rec.kept { p.ln() } else { (1.0 - p).ln() };
            let ratio = (logp_new - rec.logprob).exp();
            let clipped_ratio = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
            report.min_clipped_ratio = report.min_clipped_ratio.min(clipped_ratio);
            report.max_clipped_ratio = report.max_clipped_ratio.max(clipped_ratio);
            if ratio != clipped_ratio {
                clipped += 1;
            }
            let (_, credit) = stage_credits(adv, stage_weights);
            let unclipped_obj = ratio * credit;
            let clipped_obj = clipped_ratio * credit;
            if unclipped_obj <= clipped_obj {
                // The min selects the unclipped branch; gradient flows.
                report.surrogate += unclipped_obj;
                let dlogp = if rec.kept { 1.0 - p } else { -p };
                grad[ai][bi] += ratio * credit * dlogp;
            } else {
                report.surrogate += clipped_obj;
            }

            let q = sigmoid(reference.keep_logits[ai][bi]).clamp(1e-9, 1.0 - 1e-9);
            let kl = p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
            report.kl += kl;
            let dkl = p * (1.0 - p) * ((p / q).ln() - ((1.0 - p) / (1.0 - q)).ln());
            grad[ai][bi] -= cfg.kl_coefficient * dkl;
        }
    }

    if total > 0 {
        let scale = cfg.learning_rate / total as f64;
        for (ai, row) in grad.iter().enumerate() {
            for (bi, g) in row.iter().enumerate() {
                policy.keep_logits[ai][bi] += scale * g;
            }
        }
        report.surrogate /= total as f64;
        report.kl /= total as f64;
        report.clip_fraction = clipped as f64 / total as f64;
    }
    if report.min_clipped_ratio > report.max_clipped_ratio {
        report.min_clipped_ratio = 0.0;
        report.max_clipped_ratio = 0.0;
    }
    Ok((counter, report))
}

/// Environment and loop sizing for a toy training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSetup {
    pub policy: ToyPolicy,
    pub update: UpdateConfig,
    pub weights: QuadrantWeights,
    pub stabilizers: StabilizerConfig,
    pub stage_weights: StageWeights,
    /// Questions sampled per training step.
    pub questions_per_step: usize,
    /// Size of the synthetic question pool.
    pub item_pool: usize,
    /// Held-out rollouts per evaluation window.
    pub eval_samples: usize,
}

impl Default for TrainingSetup {
    fn default() -> Self {
        TrainingSetup {
            policy: ToyPolicy::default(),
            update: UpdateConfig::default(),
            weights: QuadrantWeights::default(),
            stabilizers: StabilizerConfig::default(),
            stage_weights: StageWeights::default(),
            questions_per_step: 8,
            item_pool: 16,
            eval_samples: 2048,
        }
    }
}

impl TrainingSetup {
    pub fn validate(&self) -> Result<(), TrainerError> {
        self.policy.validate().map_err(TrainerError::InvalidConfig)?;
        self.update.validate().map_err(TrainerError::InvalidConfig)?;
        self.weights.validate().map_err(TrainerError::InvalidConfig)?;
        self.stabilizers.validate().map_err(TrainerError::InvalidConfig)?;
        self.stage_weights.validate().map_err(TrainerError::InvalidConfig)?;
        if self.questions_per_step == 0 || self.item_pool == 0 || self.eval_samples == 0 {
            return Err(TrainerError::InvalidConfig(
                "questions_per_step, item_pool, and eval_samples must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One evaluation-window row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub mode: RewardMode,
    pub initial_pct: f64,
    pub critic_pct: f64,
    pub gain_pct: f64,
    pub correction_pct: f64,
    pub sycophancy_pct: f64,
    pub robustness_pct: f64,
    pub boundary_pct: f64,
    pub surrogate: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub p_keep_likely_right: f64,
    pub p_keep_likely_wrong: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub rows: Vec<HistoryRow>,
    pub counter: TransitionCounter,
    pub final_policy: ToyPolicy,
}

impl TrainingHistory {
    pub fn final_row(&self) -> &HistoryRow {
        self.rows.last().expect("steps >= 1 guarantees at least one row")
    }
}

/// Synthetic four-option items used by the toy environment.
pub fn synthetic_items(n: usize, id_prefix: &str) -> Vec<QAItem> {
    (0..n)
        .map(|i| {
            let gold = (b'A' + (i % 4) as u8) as char;
            QAItem {
                id: format!("{id_prefix}-{i}"),
                question: format!("Synthetic question {i}: which option is correct?"),
                options: ('A'..='D')
                    .map(|label| AnswerOption { label, body: format!("candidate {label}") })
                    .collect(),
                gold: [gold].into_iter().collect(),
                domain_tag: "synthetic".into(),
            }
        })
        .collect()
}

/// Runs the full update loop for `steps` steps. Deterministic given
/// `seed`; evaluation windows use frozen per-step seeds shared across
/// reward modes so histories are paired.
pub fn run_training(
    setup: &TrainingSetup,
    steps: usize,
    seed: u64,
) -> Result<TrainingHistory, TrainerError> {
    if steps == 0 {
        return Err(TrainerError::ZeroSteps);
    }
    setup.validate()?;
    let templates = TemplateCatalog::default_catalog();
    let train_items = synthetic_items(setup.item_pool, "train");
    let eval_items = synthetic_items(setup.item_pool, "eval");
    let mut policy = setup.policy.clone();
    let reference = setup.policy.clone();
    let mut train_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counter = TransitionCounter::default();
    let mut rows = Vec::with_capacity(steps);

    for step in 1..=steps {
        let mut minibatch = Vec::with_capacity(setup.questions_per_step);
        for _ in 0..setup.questions_per_step {
            let item = &train_items[train_rng.gen_range(0..train_items.len())];
            let mut group = Vec::with_capacity(setup.update.group_size);
            for g in 0..setup.update.group_size {
                let feedback = templates.sample(&mut train_rng);
                group.push(toy_policy_rollout(&policy, item, &feedback, g, &mut train_rng));
            }
            minibatch.push(group);
        }
        let (delta, report) = recrit_update(
            &mut policy,
            &minibatch,
            &setup.update,
            &setup.weights,
            &setup.stabilizers,
            &setup.stage_weights,
            &reference,
        )?;
        counter.merge(&delta);

        let eval = evaluate_policy(&policy, &eval_items, &templates, setup.eval_samples, seed, step);
        rows.push(HistoryRow {
            step,
            mode: setup.update.reward_mode,
            initial_pct: eval.initial_pct,
            critic_pct: eval.critic_pct,
            gain_pct: eval.gain_pct,
            correction_pct: eval.correction_pct,
            sycophancy_pct: eval.sycophancy_pct,
            robustness_pct: eval.robustness_pct,
            boundary_pct: eval.boundary_pct,
            surrogate: report.surrogate,
            kl: report.kl,
            clip_fraction: report.clip_fraction,
            p_keep_likely_right: policy.p_keep_likely_right(),
            p_keep_likely_wrong: policy.p_keep_likely_wrong(),
        });
    }
    Ok(TrainingHistory { rows, counter, final_policy: policy })
}

struct EvalSummary {
    initial_pct: f64,
    critic_pct: f64,
    gain_pct: f64,
    correction_pct: f64,
    sycophancy_pct: f64,
    robustness_pct: f64,
    boundary_pct: f64,
}

/// Held-out evaluation with a frozen rng stream derived from (seed, step);
/// identical across reward modes so comparisons are paired.
fn evaluate_policy(
    policy: &ToyPolicy,
    items: &[QAItem],
    templates: &TemplateCatalog,
    samples: usize,
    seed: u64,
    step: usize,
) -> EvalSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e7a1u64 ^ ((step as u64) << 20));
    let mut trajectories = Vec::with_capacity(samples);
    for i in 0..samples {
        let item = &items[i % items.len()];
        let feedback = templates.sample(&mut rng);
        let (t, _) = toy_policy_rollout(policy, item, &feedback, 0, &mut rng);
        trajectories.push(t);
    }
    let m = transition_matrix(&trajectories).expect("samples >= 1");
    let row = compute_metrics(&m).expect("nonempty");
    let n = m.total() as f64;
    EvalSummary {
        initial_pct: row.initial_pct,
        critic_pct: row.critic_pct,
        gain_pct: row.gain_pct,
        correction_pct: row.correction_pct,
        sycophancy_pct: row.sycophancy_pct,
        robustness_pct: 100.0 * m.n11 as f64 / n,
        boundary_pct: 100.0 * m.n00 as f64 / n,
    }
}

/// The boundary-weight sweep grid.
pub const BOUNDARY_SWEEP_GRID: [f64; 4] = [0.0, 0.1, 0.2, 0.4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub w_boun: f64,
    pub correction_pct: f64,
    pub sycophancy_pct: f64,
    pub gain_pct: f64,
}

/// Trains once per boundary-weight value and reports the final
/// (Correction, Sycophancy) operating point for each. Deterministic per
/// seed.
pub fn sweep_boundary(
    setup: &TrainingSetup,
    steps: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>, TrainerError> {
    BOUNDARY_SWEEP_GRID
        .iter()
        .map(|&w_boun| {
            let mut s = setup.clone();
            s.weights.w_boun = w_boun;
            let history = run_training(&s, steps, seed)?;
            let last = history.final_row();
            Ok(SweepPoint {
                w_boun,
                correction_pct: last.correction_pct,
                sycophancy_pct: last.sycophancy_pct,
                gain_pct: last.gain_pct,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item() -> QAItem {
        synthetic_items(1, "t").remove(0)
    }

    fn feedback() -> FeedbackTemplate {
        FeedbackTemplate {
            attitude: Attitude::Neutral,
            template_text: "please double-check".into(),
        }
    }

    #[test]
    fn certain_keep_preserves_correctness() {
        let mut policy = ToyPolicy::default();
        policy.keep_logits = [[f64::INFINITY; 2]; 3];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (t, rec) = toy_policy_rollout(&policy, &item(), &feedback(), 0, &mut rng);
            assert!(rec.kept);
            assert_eq!(t.pair.s0, t.pair.s1);
        }
    }

    #[test]
    fn certain_switch_from_correct_is_sycophancy() {
        let mut policy = ToyPolicy::default();
        policy.skill = 1.0;
        policy.keep_logits = [[f64::NEG_INFINITY; 2]; 3];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (t, _) = toy_policy_rollout(&policy, &item(), &feedback(), 0, &mut rng);
            assert_eq!(t.quadrant, Quadrant::Sycophancy);
        }
    }

    #[test]
    fn certain_fix_from_wrong_is_correction() {
        let mut policy = ToyPolicy::default();
        policy.skill = 0.0;
        policy.fix_prob = 1.0;
        policy.keep_logits = [[f64::NEG_INFINITY; 2]; 3];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (t, _) = toy_policy_rollout(&policy, &item(), &feedback(), 0, &mut rng);
            assert_eq!(t.quadrant, Quadrant::Correction);
        }
    }

    fn collect_group(policy: &ToyPolicy, n: usize, seed: u64) -> Vec<(Trajectory, ActionRecord)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|g| toy_policy_rollout(policy, &item(), &feedback(), g, &mut rng))
            .collect()
    }

    #[test]
    fn group_shape_enforced() {
        let mut policy = ToyPolicy::default();
        let reference = policy.clone();
        let bad = vec![collect_group(&policy, 3, 0)];
        let err = recrit_update(
            &mut policy,
            &bad,
            &UpdateConfig::default(),
            &QuadrantWeights::default(),
            &StabilizerConfig::default(),
            &StageWeights::default(),
            &reference,
        )
        .unwrap_err();
        assert!(matches!(err, TrainerError::GroupShapeError { expected: 4, got: 3 }));
    }

    #[test]
    fn degenerate_group_moves_logits_only_through_kl() {
        // Certain-KEEP policy: every trajectory in the group is a keep
        // transition with the same quadrant per initial correctness; force
        // same quadrant by skill=1.
        let mut policy = ToyPolicy::default();
        policy.skill = 1.0;
        policy.keep_logits = [[5.0; 2]; 3];
        let mut reference = policy.clone();
        reference.keep_logits = [[5.0; 2]; 3];
        let group = collect_group(&policy, 4, 7);
        assert!(group.iter().all(|(t, _)| t.quadrant == Quadrant::Robustness));
        let before = policy.keep_logits;
        let (counter, _) = recrit_update(
            &mut policy,
            &[group],
            &UpdateConfig::default(),
            &QuadrantWeights::default(),
            &StabilizerConfig::default(),
            &StageWeights::default(),
            &reference,
        )
        .unwrap();
        assert_eq!(counter.robustness, 4);
        // Logits equal the reference, so the KL pull is zero too.
        assert_eq!(policy.keep_logits, before);
    }

    #[test]
    fn kl_anchoring_pulls_toward_reference() {
        let mut policy = ToyPolicy::default();
        policy.keep_logits[0][0] = 2.0;
        let reference = ToyPolicy::default(); // logit 0 at every cell
        // Zero-advantage minibatch: same-quadrant group (skill=1, certain keep
        // at the perturbed cell is not guaranteed, so build records by hand).
        let cfg = UpdateConfig { learning_rate: 1.0, kl_coefficient: 1.0, ..Default::default() };
        let mut dist = (policy.keep_logits[0][0] - reference.keep_logits[0][0]).abs();
        for _ in 0..200 {
            let p = sigmoid(policy.keep_logits[0][0]);
            let group: Vec<(Trajectory, ActionRecord)> = collect_group(&policy, 4, 11)
                .into_iter()
                .map(|(mut t, mut rec)| {
                    // Pin every sample to the perturbed cell with equal rewards.
                    t.pair = CorrectnessPair::new(true, true);
                    t.quadrant = Quadrant::Robustness;
                    rec.attitude = Attitude::Opposing;
                    rec.bin = ConfidenceBin::LikelyRight;
                    rec.kept = true;
                    rec.logprob = p.ln();
                    (t, rec)
                })
                .collect();
            recrit_update(
                &mut policy,
                &[group],
                &cfg,
                &QuadrantWeights::default(),
                &StabilizerConfig::default(),
                &StageWeights::default(),
                &reference,
            )
            .unwrap();
            let new_dist = (policy.keep_logits[0][0] - reference.keep_logits[0][0]).abs();
            assert!(new_dist <= dist + 1e-12, "distance grew: {dist} -> {new_dist}");
            dist = new_dist;
        }
        assert!(dist < 1.0, "no measurable pull toward reference: {dist}");
    }

    use crate::types::CorrectnessPair;

    #[test]
    fn ratios_are_clipped() {
        let mut policy = ToyPolicy::default();
        let reference = policy.clone();
        let cfg = UpdateConfig::default();
        // Stale logprob far from the current policy forces clipping.
        let group: Vec<(Trajectory, ActionRecord)> = collect_group(&policy, 4, 13)
            .into_iter()
            .map(|(t, mut rec)| {
                rec.logprob = (0.01f64).ln();
                (t, rec)
            })
            .collect();
        let (_, report) = recrit_update(
            &mut policy,
            &[group],
            &cfg,
            &QuadrantWeights::default(),
            &StabilizerConfig::default(),
            &StageWeights::default(),
            &reference,
        )
        .unwrap();
        assert!(report.min_clipped_ratio >= 1.0 - cfg.clip_epsilon - 1e-12);
        assert!(report.max_clipped_ratio <= 1.0 + cfg.clip_epsilon + 1e-12);
        assert!(report.clip_fraction > 0.0);
    }

    #[test]
    fn final_answer_mode_collapses_quadrant_pairs() {
        let policy = ToyPolicy::default();
        // Build one of each quadrant by hand.
        let mut group = Vec::new();
        for q in Quadrant::ALL {
            let pair = q.to_pair();
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let (mut t, rec) = toy_policy_rollout(&policy, &item(), &feedback(), 0, &mut rng);
            t.pair = pair;
            t.quadrant = q;
            group.push((t, rec));
        }
        let rewards_fa: Vec<f64> = group
            .iter()
            .map(|(t, _)| {
                reward_for(
                    t,
                    RewardMode::FinalAnswerOnly,
                    &QuadrantWeights::default(),
                    &StabilizerConfig::default(),
                    &StageWeights::default(),
                )
            })
            .collect();
        // Correction == Robustness and Sycophancy == Boundary under S1-only.
        assert_eq!(rewards_fa[0], rewards_fa[1]);
        assert_eq!(rewards_fa[2], rewards_fa[3]);
        let adv = normalize_group(&rewards_fa, 1e-6).unwrap().advantages;
        assert_eq!(adv[0], adv[1]);
        assert_eq!(adv[2], adv[3]);
    }

    #[test]
    fn four_quadrant_group_gives_correction_largest_credit() {
        let rewards: Vec<f64> = Quadrant::ALL
            .iter()
            .map(|&q| crate::reward::quadrant_reward(q, &QuadrantWeights::default()))
            .collect();
        let adv = normalize_group(&rewards, 1e-6).unwrap().advantages;
        assert!((adv[0] - 1.152).abs() < 1e-3);
        assert!(adv[0] > adv[1] && adv[0] > adv[2] && adv[0] > adv[3]);
    }

    #[test]
    fn training_is_deterministic_and_rejects_zero_steps() {
        let setup = TrainingSetup { eval_samples: 64, ..Default::default() };
        assert!(matches!(run_training(&setup, 0, 1), Err(TrainerError::ZeroSteps)));
        let one = run_training(&setup, 1, 1).unwrap();
        assert_eq!(one.rows.len(), 1);
        let a = run_training(&setup, 5, 9).unwrap();
        let b = run_training(&setup, 5, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn counter_conservation() {
        let setup = TrainingSetup { eval_samples: 32, ..Default::default() };
        let steps = 10;
        let history = run_training(&setup, steps, 3).unwrap();
        let expected =
            steps * setup.questions_per_step * setup.update.group_size;
        assert_eq!(history.counter.total(), expected);
        let m = history.counter.as_matrix();
        let gain_from_counts =
            (m.n01 as f64 - m.n10 as f64) / m.total() as f64;
        assert!((history.counter.gain() - gain_from_counts).abs() < 1e-15);
    }

    #[test]
    fn sweep_is_deterministic_with_full_grid() {
        let setup = TrainingSetup { eval_samples: 64, ..Default::default() };
        let a = sweep_boundary(&setup, 5, 21).unwrap();
        let b = sweep_boundary(&setup, 5, 21).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        let grid: Vec<f64> = a.iter().map(|p| p.w_boun).collect();
        assert_eq!(grid, BOUNDARY_SWEEP_GRID.to_vec());
    }
}
