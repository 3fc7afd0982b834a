//! Shared domain vocabulary: questions, solutions, correctness pairs,
//! transition quadrants, and the reward weight scalars.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One closed-form scientific question with gold answer label(s).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub question: String,
    /// Ordered answer options, labeled with single uppercase letters.
    pub options: Vec<AnswerOption>,
    /// Gold labels as a set; multi-label items carry more than one letter.
    pub gold: BTreeSet<char>,
    pub domain_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub label: char,
    pub body: String,
}

/// Invariant violations raised when constructing or validating domain values.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("item {id}: question text is empty")]
    EmptyQuestion { id: String },
    #[error("item {id}: option labels must be unique and contiguous from 'A', got {labels:?}")]
    BadOptionLabels { id: String, labels: Vec<char> },
    #[error("item {id}: gold label {label} is not an option label")]
    GoldNotAnOption { id: String, label: char },
    #[error("item {id}: gold set is empty")]
    EmptyGold { id: String },
    #[error("tail-completed trajectory carries quadrant {0:?}")]
    IllegalTailQuadrant(Quadrant),
    #[error("tail-completed trajectory has y1 text differing from y0")]
    TailTextMismatch,
}

impl QAItem {
    /// Checks the type invariants: nonempty question, option labels unique
    /// and contiguous from 'A', gold a nonempty subset of the labels.
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.question.trim().is_empty() {
            return Err(DomainError::EmptyQuestion { id: self.id.clone() });
        }
        let labels: Vec<char> = self.options.iter().map(|o| o.label).collect();
        let expected: Vec<char> = (0..self.options.len())
            .map(|i| (b'A' + i as u8) as char)
            .collect();
        if labels != expected {
            return Err(DomainError::BadOptionLabels {
                id: self.id.clone(),
                labels,
            });
        }
        if self.gold.is_empty() {
            return Err(DomainError::EmptyGold { id: self.id.clone() });
        }
        for &g in &self.gold {
            if !self.options.iter().any(|o| o.label == g) {
                return Err(DomainError::GoldNotAnOption {
                    id: self.id.clone(),
                    label: g,
                });
            }
        }
        Ok(())
    }

    pub fn option_labels(&self) -> Vec<char> {
        self.options.iter().map(|o| o.label).collect()
    }
}

/// Which generation turn a solution belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    Initial,
    Critic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinishReason {
    Complete,
    LengthBudget,
    EngineError,
}

/// Raw generated text for one stage of an interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub text: String,
    pub stage: Stage,
    pub finish_reason: FinishReason,
    /// Engine-reported token count; `None` falls back to whitespace tokens.
    pub token_count: Option<usize>,
}

impl Solution {
    pub fn new(text: impl Into<String>, stage: Stage) -> Self {
        Solution {
            text: text.into(),
            stage,
            finish_reason: FinishReason::Complete,
            token_count: None,
        }
    }

    /// Engine-reported token count, or the whitespace-token fallback.
    pub fn tokens(&self) -> usize {
        self.token_count
            .unwrap_or_else(|| self.text.split_whitespace().count())
    }
}

/// Tone of a critic feedback turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Attitude {
    Opposing,
    Neutral,
    Supportive,
}

impl Attitude {
    pub const ALL: [Attitude; 3] = [Attitude::Opposing, Attitude::Neutral, Attitude::Supportive];

    pub fn index(self) -> usize {
        match self {
            Attitude::Opposing => 0,
            Attitude::Neutral => 1,
            Attitude::Supportive => 2,
        }
    }
}

/// A critic feedback turn: the attitude plus the template text injected
/// between the Initial and Critic generations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackTemplate {
    pub attitude: Attitude,
    pub template_text: String,
}

/// Ordered pair of binary correctness judgments (Initial, Critic).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CorrectnessPair {
    pub s0: bool,
    pub s1: bool,
}

impl CorrectnessPair {
    pub fn new(s0: bool, s1: bool) -> Self {
        CorrectnessPair { s0, s1 }
    }
}

/// The four Initial-to-Critic transition classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quadrant {
    /// Initially wrong, correct after feedback: (0,1).
    Correction,
    /// Correct before and after: (1,1).
    Robustness,
    /// Initially correct, wrong after feedback: (1,0).
    Sycophancy,
    /// Wrong before and after: (0,0).
    Boundary,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::Correction,
        Quadrant::Robustness,
        Quadrant::Sycophancy,
        Quadrant::Boundary,
    ];

    /// The correctness pair this quadrant corresponds to (inverse of
    /// [`classify_transition`]).
    pub fn to_pair(self) -> CorrectnessPair {
        match self {
            Quadrant::Correction => CorrectnessPair::new(false, true),
            Quadrant::Robustness => CorrectnessPair::new(true, true),
            Quadrant::Sycophancy => CorrectnessPair::new(true, false),
            Quadrant::Boundary => CorrectnessPair::new(false, false),
        }
    }
}

/// Maps a correctness pair to its transition quadrant. Total and
/// deterministic over the four possible pairs.
pub fn classify_transition(pair: CorrectnessPair) -> Quadrant {
    match (pair.s0, pair.s1) {
        (false, true) => Quadrant::Correction,
        (true, true) => Quadrant::Robustness,
        (true, false) => Quadrant::Sycophancy,
        (false, false) => Quadrant::Boundary,
    }
}

/// The four reward scalars of the transition reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadrantWeights {
    pub w_corr: f64,
    pub w_syco: f64,
    pub w_rob: f64,
    pub w_boun: f64,
}

impl Default for QuadrantWeights {
    fn default() -> Self {
        QuadrantWeights {
            w_corr: 1.0,
            w_syco: 1.0,
            w_rob: 0.6,
            w_boun: 0.1,
        }
    }
}

impl QuadrantWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("w_corr", self.w_corr),
            ("w_syco", self.w_syco),
            ("w_rob", self.w_rob),
            ("w_boun", self.w_boun),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} must be a nonnegative finite number, got {v}"));
            }
        }
        Ok(())
    }
}

/// Per-solution format defects recorded during judging and reward shaping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FormatFlag {
    MissingThinkTags,
    EmptyFinalAnswer,
    Overlength,
    Repetitive,
}

pub type FormatFlags = BTreeSet<FormatFlag>;

/// One fully judged interaction: question reference, both solutions, the
/// feedback that connected them, and the resulting transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub item_ref: String,
    pub group_index: usize,
    pub y0: Solution,
    pub feedback: FeedbackTemplate,
    pub y1: Solution,
    pub pair: CorrectnessPair,
    pub quadrant: Quadrant,
    pub tail_completed: bool,
    pub y0_flags: FormatFlags,
    pub y1_flags: FormatFlags,
}

impl Trajectory {
    /// Builds a trajectory, deriving the quadrant from the pair and
    /// enforcing the tail-completion invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        item_ref: impl Into<String>,
        group_index: usize,
        y0: Solution,
        feedback: FeedbackTemplate,
        y1: Solution,
        pair: CorrectnessPair,
        tail_completed: bool,
        y0_flags: FormatFlags,
        y1_flags: FormatFlags,
    ) -> Result<Self, DomainError> {
        let quadrant = classify_transition(pair);
        if tail_completed {
            if !matches!(quadrant, Quadrant::Robustness | Quadrant::Boundary) {
                return Err(DomainError::IllegalTailQuadrant(quadrant));
            }
            if y1.text != y0.text {
                return Err(DomainError::TailTextMismatch);
            }
        }
        Ok(Trajectory {
            item_ref: item_ref.into(),
            group_index,
            y0,
            feedback,
            y1,
            pair,
            quadrant,
            tail_completed,
            y0_flags,
            y1_flags,
        })
    }

    /// Union of the per-stage format flags.
    pub fn format_flags(&self) -> FormatFlags {
        self.y0_flags.union(&self.y1_flags).copied().collect()
    }
}
