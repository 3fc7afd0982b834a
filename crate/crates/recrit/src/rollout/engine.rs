//! The asynchronous generation engine abstraction the schedulers drive.

use serde::{Deserialize, Serialize};

use crate::types::{Attitude, Solution, Stage};

/// Opaque ticket for an in-flight generation request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RequestHandle(pub u64);

/// One generation request: a prompt at a given stage for a batch slot.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    /// Index of the batch slot this request belongs to.
    pub slot: usize,
    pub stage: Stage,
    /// Question text for Initial; question + Initial solution + feedback
    /// template for Critic.
    pub prompt: String,
    pub max_tokens: usize,
    pub temperature: f64,
    /// Attitude of the feedback carried by a Critic request; engines may
    /// condition generation on it.
    pub attitude: Option<Attitude>,
}

/// A finished request surfaced by [`GenerationEngine::poll`].
#[derive(Debug, Clone)]
pub struct Completion {
    pub handle: RequestHandle,
    pub slot: usize,
    pub stage: Stage,
    pub solution: Solution,
    /// Request latency in engine time units (simulated units or seconds).
    pub latency: f64,
}

/// Submit/poll generation abstraction.
///
/// Contract: `submit` returns a handle immediately; requests may finish in
/// any order; `poll` blocks (or advances simulated time) until at least one
/// in-flight request finishes and never returns a handle twice; `cancel` is
/// best-effort. Every submitted handle eventually finishes or is cancelled.
pub trait GenerationEngine {
    fn submit(&mut self, request: GenerationRequest) -> RequestHandle;

    /// Returns the set of newly finished requests. Empty only when nothing
    /// is in flight.
    fn poll(&mut self) -> Vec<Completion>;

    fn cancel(&mut self, handle: RequestHandle);

    /// Engine time elapsed since construction: the simulated clock for
    /// simulator backends, wall-clock seconds for remote ones.
    fn elapsed(&self) -> f64;
}
