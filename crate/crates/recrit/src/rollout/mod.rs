//! Two-stage rollout scheduling over an abstract generation engine.
//!
//! The dynamic scheduler resubmits each sample for Critic generation the
//! moment its Initial generation finishes and terminates the batch once a
//! configured fraction has completed both stages; stragglers holding an
//! Initial solution are completed as keep transitions. A synchronous
//! baseline with a stage barrier is provided for comparison.

pub mod engine;
pub mod http;
pub mod sim;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::{Completion, GenerationEngine, GenerationRequest, RequestHandle};

use crate::judge::judge_pair;
use crate::types::{
    Attitude, FeedbackTemplate, QAItem, Solution, Stage, Trajectory,
};

/// Feedback templates with sampling weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateCatalog {
    pub templates: Vec<FeedbackTemplate>,
    /// Relative sampling weight per template; uniform by default.
    pub weights: Vec<f64>,
}

impl TemplateCatalog {
    pub fn uniform(templates: Vec<FeedbackTemplate>) -> Self {
        let n = templates.len();
        TemplateCatalog {
            templates,
            weights: vec![1.0; n],
        }
    }

    /// The built-in three-attitude catalog.
    pub fn default_catalog() -> Self {
        TemplateCatalog::uniform(vec![
            FeedbackTemplate {
                attitude: Attitude::Opposing,
                template_text: "I don't think that's right. Please reconsider and give your \
                                final answer."
                    .into(),
            },
            FeedbackTemplate {
                attitude: Attitude::Neutral,
                template_text: "Can you verify your reasoning and confirm your final answer?"
                    .into(),
            },
            FeedbackTemplate {
                attitude: Attitude::Supportive,
                template_text: "That looks reasonable to me, but please double-check and \
                                confirm your final answer."
                    .into(),
            },
        ])
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.templates.is_empty() {
            return Err("template catalog must be nonempty".into());
        }
        if self.weights.len() != self.templates.len() {
            return Err("template weights must match template count".into());
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) || self.weights.iter().sum::<f64>() <= 0.0 {
            return Err("template weights must be nonnegative with positive sum".into());
        }
        if self.templates.iter().any(|t| t.template_text.trim().is_empty()) {
            return Err("template text must be nonempty".into());
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> FeedbackTemplate {
        let total: f64 = self.weights.iter().sum();
        let mut x = rng.gen_range(0.0..total);
        for (t, &w) in self.templates.iter().zip(&self.weights) {
            if x < w {
                return t.clone();
            }
            x -= w;
        }
        self.templates.last().expect("nonempty catalog").clone()
    }
}

/// Generation parameters applied to every request in a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenParams {
    pub max_tokens: usize,
    pub temperature: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            max_tokens: 4096,
            temperature: 1.0,
        }
    }
}

/// Where a batch slot currently stands in the two-stage pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum SlotStatus {
    PendingInitial,
    InFlightInitial {
        handle: RequestHandle,
    },
    PendingCritic {
        y0: Solution,
    },
    InFlightCritic {
        handle: RequestHandle,
        y0: Solution,
    },
    Done {
        y0: Solution,
        y1: Solution,
    },
    TailCompleted,
    Dropped,
}

/// In-flight scheduling state for one rollout batch.
pub struct RolloutState {
    pub slots: Vec<SlotStatus>,
    pub feedback: Vec<FeedbackTemplate>,
    done_count: usize,
}

impl RolloutState {
    fn new(n: usize, feedback: Vec<FeedbackTemplate>) -> Self {
        RolloutState {
            slots: vec![SlotStatus::PendingInitial; n],
            feedback,
            done_count: 0,
        }
    }

    pub fn done_count(&self) -> usize {
        self.done_count
    }
}

/// Fraction of batch slots that have completed both stages.
pub fn complete_ratio(state: &RolloutState) -> f64 {
    if state.slots.is_empty() {
        return 0.0;
    }
    state.done_count as f64 / state.slots.len() as f64
}

/// Per-batch scheduling statistics.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RolloutStats {
    /// Engine time units from batch start to rollout termination.
    pub makespan: f64,
    pub initial_latencies: Vec<f64>,
    pub critic_latencies: Vec<f64>,
    pub tail_completed: usize,
    pub dropped: usize,
    pub engine_errors: usize,
}

impl RolloutStats {
    pub fn latency_summary(latencies: &[f64]) -> LatencySummary {
        if latencies.is_empty() {
            return LatencySummary::default();
        }
        let mut sorted = latencies.to_vec();
        sorted.sort_by(f64::total_cmp);
        let pct = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
        LatencySummary {
            count: sorted.len(),
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p50: pct(0.5),
            p95: pct(0.95),
            max: *sorted.last().unwrap(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("rollout batch is empty")]
    EmptyBatch,
    #[error("completion ratio must lie in (0,1], got {0}")]
    BadCompletionRatio(f64),
    #[error("invalid template catalog: {0}")]
    BadTemplates(String),
    #[error("slot {0} has no Initial solution to tail-complete")]
    MissingInitial(usize),
    #[error(transparent)]
    Domain(#[from] crate::types::DomainError),
}

fn initial_prompt(item: &QAItem, _params: &GenParams) -> String {
    let mut s = String::new();
    s.push_str(&item.question);
    s.push_str("\nOptions:\n");
    for opt in &item.options {
        s.push_str(&format!("{}. {}\n", opt.label, opt.body));
    }
    s.push_str(
        "\nShow your reasoning inside <think> and </think>. After </think>, output only the \
         option label(s), with no other text.",
    );
    s
}

fn critic_prompt(item: &QAItem, y0: &Solution, feedback: &FeedbackTemplate, params: &GenParams) -> String {
    // Question, then the full Initial solution, then the feedback turn.
    format!(
        "{}\n\nYour previous answer:\n{}\n\n{}",
        initial_prompt(item, params),
        y0.text,
        feedback.template_text
    )
}

/// Completes a straggler holding `y0` as a keep transition: `y1 := y0`,
/// giving Robustness when the Initial solution was correct and Boundary
/// when it was wrong.
pub fn tail_complete(
    item: &QAItem,
    group_index: usize,
    y0: &Solution,
    feedback: &FeedbackTemplate,
    slot: usize,
) -> Result<Trajectory, RolloutError> {
    if y0.stage != Stage::Initial {
        return Err(RolloutError::MissingInitial(slot));
    }
    let mut y1 = y0.clone();
    y1.stage = Stage::Critic;
    let (pair, f0, f1) = judge_pair(item, y0, &y1);
    debug_assert_eq!(pair.s0, pair.s1);
    Ok(Trajectory::new(
        item.id.clone(),
        group_index,
        y0.clone(),
        feedback.clone(),
        y1,
        pair,
        true,
        f0,
        f1,
    )?)
}

struct BatchRun<'a> {
    batch: &'a [(QAItem, usize)],
    params: GenParams,
}

impl<'a> BatchRun<'a> {
    fn submit_initial(&self, engine: &mut dyn GenerationEngine, slot: usize) -> RequestHandle {
        let (item, _) = &self.batch[slot];
        engine.submit(GenerationRequest {
            slot,
            stage: Stage::Initial,
            prompt: initial_prompt(item, &self.params),
            max_tokens: self.params.max_tokens,
            temperature: self.params.temperature,
            attitude: None,
        })
    }

    fn submit_critic(
        &self,
        engine: &mut dyn GenerationEngine,
        slot: usize,
        y0: &Solution,
        feedback: &FeedbackTemplate,
    ) -> RequestHandle {
        let (item, _) = &self.batch[slot];
        engine.submit(GenerationRequest {
            slot,
            stage: Stage::Critic,
            prompt: critic_prompt(item, y0, feedback, &self.params),
            max_tokens: self.params.max_tokens,
            temperature: self.params.temperature,
            attitude: Some(feedback.attitude),
        })
    }

    fn judged_trajectory(
        &self,
        slot: usize,
        y0: Solution,
        y1: Solution,
        feedback: &FeedbackTemplate,
    ) -> Result<Trajectory, RolloutError> {
        let (item, group_index) = &self.batch[slot];
        let (pair, f0, f1) = judge_pair(item, &y0, &y1);
        Ok(Trajectory::new(
            item.id.clone(),
            *group_index,
            y0,
            feedback.clone(),
            y1,
            pair,
            false,
            f0,
            f1,
        )?)
    }
}

fn validate_batch(
    batch: &[(QAItem, usize)],
    templates: &TemplateCatalog,
) -> Result<(), RolloutError> {
    if batch.is_empty() {
        return Err(RolloutError::EmptyBatch);
    }
    templates.validate().map_err(RolloutError::BadTemplates)?;
    Ok(())
}

/// Dynamic asynchronous rollout with tail-adaptive completion.
///
/// Each finished Initial generation is immediately resubmitted at the
/// Critic stage with a sampled feedback template. The loop terminates once
/// `rho` of the batch has completed both stages; slots holding `y0` but no
/// `y1` become keep transitions, slots with no `y0` are cancelled and
/// counted as dropped. `rho = 1` runs to full completion with no tail
/// completions and no drops.
pub fn run_dynamic_rollout(
    batch: &[(QAItem, usize)],
    engine: &mut dyn GenerationEngine,
    templates: &TemplateCatalog,
    rho: f64,
    params: GenParams,
    rng: &mut impl Rng,
) -> Result<(Vec<Trajectory>, RolloutStats), RolloutError> {
    validate_batch(batch, templates)?;
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(RolloutError::BadCompletionRatio(rho));
    }
    let n = batch.len();
    let run = BatchRun { batch, params };
    // Feedback is drawn per slot in batch order up front so trajectory
    // contents are independent of completion order.
    let feedback: Vec<FeedbackTemplate> = (0..n).map(|_| templates.sample(rng)).collect();
    let mut state = RolloutState::new(n, feedback);
    let started_at = engine.elapsed();
    let mut stats = RolloutStats::default();

    for slot in 0..n {
        let handle = run.submit_initial(engine, slot);
        state.slots[slot] = SlotStatus::InFlightInitial { handle };
    }

    while complete_ratio(&state) < rho - 1e-9 {
        let completions = engine.poll();
        if completions.is_empty() {
            break; // nothing left in flight
        }
        for c in completions {
            if c.solution.finish_reason == crate::types::FinishReason::EngineError {
                stats.engine_errors += 1;
            }
            match (c.stage, state.slots[c.slot].clone()) {
                (Stage::Initial, SlotStatus::InFlightInitial { .. }) => {
                    stats.initial_latencies.push(c.latency);
                    let feedback = state.feedback[c.slot].clone();
                    let handle = run.submit_critic(engine, c.slot, &c.solution, &feedback);
                    state.slots[c.slot] = SlotStatus::InFlightCritic {
                        handle,
                        y0: c.solution,
                    };
                }
                (Stage::Critic, SlotStatus::InFlightCritic { y0, .. }) => {
                    stats.critic_latencies.push(c.latency);
                    state.slots[c.slot] = SlotStatus::Done { y0, y1: c.solution };
                    state.done_count += 1;
                }
                _ => unreachable!("completion for a slot not in flight"),
            }
        }
    }

    // Terminate: cancel stragglers, then realize trajectories in slot order.
    for slot in 0..n {
        match &state.slots[slot] {
            SlotStatus::InFlightInitial { handle } => {
                engine.cancel(*handle);
                state.slots[slot] = SlotStatus::Dropped;
            }
            SlotStatus::InFlightCritic { handle, y0 } => {
                let (handle, y0) = (*handle, y0.clone());
                engine.cancel(handle);
                state.slots[slot] = SlotStatus::PendingCritic { y0 };
            }
            _ => {}
        }
    }
    stats.makespan = engine.elapsed() - started_at;

    let mut trajectories = Vec::with_capacity(n);
    for slot in 0..n {
        match state.slots[slot].clone() {
            SlotStatus::Done { y0, y1 } => {
                trajectories.push(run.judged_trajectory(slot, y0, y1, &state.feedback[slot])?);
            }
            SlotStatus::PendingCritic { y0 } => {
                let (item, group_index) = &batch[slot];
                trajectories.push(tail_complete(
                    item,
                    *group_index,
                    &y0,
                    &state.feedback[slot],
                    slot,
                )?);
                stats.tail_completed += 1;
                state.slots[slot] = SlotStatus::TailCompleted;
            }
            SlotStatus::Dropped => {
                stats.dropped += 1;
            }
            _ => unreachable!("unresolved slot after termination"),
        }
    }
    Ok((trajectories, stats))
}

/// Synchronous baseline: all Initial generations complete before any
/// Critic request is submitted. No tail completion.
pub fn run_synchronous_rollout(
    batch: &[(QAItem, usize)],
    engine: &mut dyn GenerationEngine,
    templates: &TemplateCatalog,
    params: GenParams,
    rng: &mut impl Rng,
) -> Result<(Vec<Trajectory>, RolloutStats), RolloutError> {
    validate_batch(batch, templates)?;
    let n = batch.len();
    let run = BatchRun { batch, params };
    let feedback: Vec<FeedbackTemplate> = (0..n).map(|_| templates.sample(rng)).collect();
    let started_at = engine.elapsed();
    let mut stats = RolloutStats::default();

    for slot in 0..n {
        run.submit_initial(engine, slot);
    }
    let mut y0s: Vec<Option<Solution>> = vec![None; n];
    let mut pending = n;
    while pending > 0 {
        let completions = engine.poll();
        if completions.is_empty() {
            break;
        }
        for c in completions {
            if c.solution.finish_reason == crate::types::FinishReason::EngineError {
                stats.engine_errors += 1;
            }
            stats.initial_latencies.push(c.latency);
            y0s[c.slot] = Some(c.solution);
            pending -= 1;
        }
    }

    // Stage barrier: submit every Critic request in slot order.
    for slot in 0..n {
        let y0 = y0s[slot].as_ref().expect("initial stage complete");
        run.submit_critic(engine, slot, y0, &feedback[slot]);
    }
    let mut y1s: Vec<Option<Solution>> = vec![None; n];
    let mut pending = n;
    while pending > 0 {
        let completions = engine.poll();
        if completions.is_empty() {
            break;
        }
        for c in completions {
            if c.solution.finish_reason == crate::types::FinishReason::EngineError {
                stats.engine_errors += 1;
            }
            stats.critic_latencies.push(c.latency);
            y1s[c.slot] = Some(c.solution);
            pending -= 1;
        }
    }
    stats.makespan = engine.elapsed() - started_at;

    let mut trajectories = Vec::with_capacity(n);
    for slot in 0..n {
        let y0 = y0s[slot].take().expect("initial stage complete");
        let y1 = y1s[slot].take().expect("critic stage complete");
        trajectories.push(run.judged_trajectory(slot, y0, y1, &feedback[slot])?);
    }
    Ok((trajectories, stats))
}
