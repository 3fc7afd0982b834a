//! Transition-aware critic-interaction training and evaluation toolkit.
//!
//! The pipeline judges two-stage question answering (an Initial solution,
//! a critic feedback turn, a Critic solution), classifies each interaction
//! into one of four transition quadrants, turns quadrants into rewards
//! with group-normalized advantages, and drives both a dynamic rollout
//! scheduler and a desk-scale policy-gradient training loop on top.

pub mod config;
pub mod judge;
pub mod metrics;
pub mod reward;
pub mod rollout;
pub mod trainer;
pub mod types;
