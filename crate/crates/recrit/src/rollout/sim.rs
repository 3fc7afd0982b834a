//! Discrete-event simulated generation engine.
//!
//! The simulated clock advances event-to-event, so throughput experiments
//! are deterministic per seed and run in milliseconds. Latency and answer
//! draws are keyed by (seed, slot, stage), never by submission order, so a
//! given seed produces the same generations under any scheduling policy.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::rollout::engine::{Completion, GenerationEngine, GenerationRequest, RequestHandle};
use crate::types::{FinishReason, QAItem, Solution, Stage};

/// Latency distribution for one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LatencyDist {
    /// Fixed per-slot latencies, indexed by slot modulo the list length.
    Deterministic { values: Vec<f64> },
    LogNormal { mu: f64, sigma: f64 },
    Exponential { rate: f64 },
}

impl LatencyDist {
    fn sample(&self, slot: usize, rng: &mut ChaCha8Rng) -> f64 {
        let v = match self {
            LatencyDist::Deterministic { values } => values[slot % values.len()],
            LatencyDist::LogNormal { mu, sigma } => {
                LogNormal::new(*mu, *sigma).expect("valid lognormal").sample(rng)
            }
            LatencyDist::Exponential { rate } => {
                Exp::new(*rate).expect("valid exponential").sample(rng)
            }
        };
        v.max(f64::MIN_POSITIVE)
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            LatencyDist::Deterministic { values } => {
                if values.is_empty() {
                    return Err("deterministic latency list must be nonempty".into());
                }
                if values.iter().any(|&v| !(v > 0.0)) {
                    return Err("deterministic latencies must be positive".into());
                }
            }
            LatencyDist::LogNormal { sigma, .. } => {
                if !(*sigma >= 0.0) {
                    return Err("lognormal sigma must be nonnegative".into());
                }
            }
            LatencyDist::Exponential { rate } => {
                if !(*rate > 0.0) {
                    return Err("exponential rate must be positive".into());
                }
            }
        }
        Ok(())
    }
}

/// Per-stage latency distributions plus the sampling seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub initial: LatencyDist,
    pub critic: LatencyDist,
    pub seed: u64,
}

impl LatencyModel {
    fn sample(&self, slot: usize, stage: Stage) -> f64 {
        let dist = match stage {
            Stage::Initial => &self.initial,
            Stage::Critic => &self.critic,
        };
        let mut rng = request_rng(self.seed, slot, stage, 0x1a7e);
        dist.sample(slot, &mut rng)
    }
}

/// Answer behavior of the simulated model: probability of emitting a
/// correct final answer per stage, optionally conditioned on the feedback
/// attitude of Critic requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnswerModel {
    pub initial_correct: f64,
    pub critic_correct: f64,
    /// Overrides `critic_correct` per attitude (opposing, neutral,
    /// supportive) when present.
    pub per_attitude_critic: Option<[f64; 3]>,
    pub seed: u64,
}

impl Default for AnswerModel {
    fn default() -> Self {
        AnswerModel {
            initial_correct: 0.5,
            critic_correct: 0.5,
            per_attitude_critic: None,
            seed: 0,
        }
    }
}

impl AnswerModel {
    pub fn validate(&self) -> Result<(), String> {
        let mut probs = vec![self.initial_correct, self.critic_correct];
        if let Some(pa) = self.per_attitude_critic {
            probs.extend(pa);
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err("answer probabilities must lie in [0,1]".into());
        }
        Ok(())
    }

    fn correct_prob(&self, req: &GenerationRequest) -> f64 {
        match req.stage {
            Stage::Initial => self.initial_correct,
            Stage::Critic => match (self.per_attitude_critic, req.attitude) {
                (Some(pa), Some(att)) => pa[att.index()],
                _ => self.critic_correct,
            },
        }
    }
}

/// Mixes a request identity into an independent RNG stream.
fn request_rng(seed: u64, slot: usize, stage: Stage, salt: u64) -> ChaCha8Rng {
    let stage_bits = match stage {
        Stage::Initial => 0x9e3779b97f4a7c15u64,
        Stage::Critic => 0xbf58476d1ce4e5b9u64,
    };
    let mut z = seed
        ^ stage_bits
        ^ (slot as u64).wrapping_mul(0x94d049bb133111eb)
        ^ salt.wrapping_mul(0xd6e8feb86659fd93);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

#[derive(Debug, Clone)]
struct Scheduled {
    finish: f64,
    handle: RequestHandle,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.finish == other.finish && self.handle == other.handle
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.finish
            .total_cmp(&other.finish)
            .then(self.handle.cmp(&other.handle))
    }
}

struct InFlight {
    request: GenerationRequest,
    latency: f64,
    started: f64,
}

/// Simulated engine over a latency model and an answer model.
pub struct SimulatedEngine {
    latency_model: LatencyModel,
    answer_model: AnswerModel,
    /// Per-slot (gold string, option labels) for answer synthesis.
    slots: HashMap<usize, (String, Vec<char>)>,
    concurrency: Option<usize>,
    clock: f64,
    next_handle: u64,
    running: BinaryHeap<Reverse<Scheduled>>,
    in_flight: HashMap<RequestHandle, InFlight>,
    queued: VecDeque<RequestHandle>,
    cancelled: HashSet<RequestHandle>,
}

impl SimulatedEngine {
    /// `items[i]` describes batch slot `i`. `concurrency` of `None` means
    /// unlimited in-flight requests.
    pub fn new(
        latency_model: LatencyModel,
        answer_model: AnswerModel,
        items: &[QAItem],
        concurrency: Option<usize>,
    ) -> Self {
        let slots = items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let gold: String = item.gold.iter().collect();
                (i, (gold, item.option_labels()))
            })
            .collect();
        SimulatedEngine {
            latency_model,
            answer_model,
            slots,
            concurrency,
            clock: 0.0,
            next_handle: 0,
            running: BinaryHeap::new(),
            in_flight: HashMap::new(),
            queued: VecDeque::new(),
            cancelled: HashSet::new(),
        }
    }

    fn has_capacity(&self) -> bool {
        match self.concurrency {
            Some(limit) => self.running.len() < limit,
            None => true,
        }
    }

    fn start(&mut self, handle: RequestHandle) {
        let entry = self.in_flight.get_mut(&handle).expect("known handle");
        entry.started = self.clock;
        self.running.push(Reverse(Scheduled {
            finish: self.clock + entry.latency,
            handle,
        }));
    }

    fn start_queued(&mut self) {
        while self.has_capacity() {
            match self.queued.pop_front() {
                Some(h) => {
                    if self.cancelled.contains(&h) {
                        self.in_flight.remove(&h);
                        continue;
                    }
                    self.start(h);
                }
                None => break,
            }
        }
    }

    fn synthesize(&self, req: &GenerationRequest) -> Solution {
        let mut rng = request_rng(self.answer_model.seed, req.slot, req.stage, 0xa45);
        let correct = rng.gen_bool(self.answer_model.correct_prob(req));
        let (gold, labels) = self
            .slots
            .get(&req.slot)
            .cloned()
            .unwrap_or_else(|| ("A".to_string(), vec!['A', 'B', 'C', 'D']));
        let letters = if correct {
            gold
        } else {
            wrong_answer(&gold, &labels, &mut rng)
        };
        let think = match req.stage {
            Stage::Initial => "working through the options",
            Stage::Critic => "re-examining the earlier reasoning",
        };
        let text = format!("<think>{think}</think>\n{letters}");
        let mut sol = Solution::new(text, req.stage);
        sol.token_count = Some(sol.text.split_whitespace().count());
        sol
    }
}

/// Picks an answer string that will judge incorrect against `gold`.
fn wrong_answer(gold: &str, labels: &[char], rng: &mut ChaCha8Rng) -> String {
    let gold_set: std::collections::BTreeSet<char> = gold.chars().collect();
    let non_gold: Vec<char> = labels.iter().copied().filter(|c| !gold_set.contains(c)).collect();
    if !non_gold.is_empty() {
        non_gold[rng.gen_range(0..non_gold.len())].to_string()
    } else if gold.len() > 1 {
        gold[..gold.len() - 1].to_string()
    } else {
        "Z".to_string()
    }
}

impl GenerationEngine for SimulatedEngine {
    fn submit(&mut self, request: GenerationRequest) -> RequestHandle {
        let handle = RequestHandle(self.next_handle);
        self.next_handle += 1;
        let latency = self.latency_model.sample(request.slot, request.stage);
        self.in_flight.insert(
            handle,
            InFlight {
                request,
                latency,
                started: self.clock,
            },
        );
        if self.has_capacity() && self.queued.is_empty() {
            self.start(handle);
        } else {
            self.queued.push_back(handle);
        }
        handle
    }

    fn poll(&mut self) -> Vec<Completion> {
        loop {
            let head = match self.running.peek() {
                Some(Reverse(s)) => s.clone(),
                None => return Vec::new(),
            };
            // Advance the clock to the next completion and drain everything
            // finishing at that instant.
            self.clock = self.clock.max(head.finish);
            let mut completions = Vec::new();
            while let Some(Reverse(s)) = self.running.peek() {
                if s.finish > head.finish {
                    break;
                }
                let s = self.running.pop().unwrap().0;
                let entry = self.in_flight.remove(&s.handle).expect("known handle");
                self.start_queued();
                if self.cancelled.remove(&s.handle) {
                    continue;
                }
                let solution = self.synthesize(&entry.request);
                completions.push(Completion {
                    handle: s.handle,
                    slot: entry.request.slot,
                    stage: entry.request.stage,
                    solution,
                    latency: self.clock - entry.started,
                });
            }
            if !completions.is_empty() {
                return completions;
            }
        }
    }

    fn cancel(&mut self, handle: RequestHandle) {
        if self.in_flight.contains_key(&handle) {
            self.cancelled.insert(handle);
        }
    }

    fn elapsed(&self) -> f64 {
        self.clock
    }
}

/// A simulated solution that reports an engine failure; used by tests and
/// fault-injection wrappers.
pub fn engine_error_solution(stage: Stage) -> Solution {
    Solution {
        text: String::new(),
        stage,
        finish_reason: FinishReason::EngineError,
        token_count: Some(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{AnswerOption, Attitude};

    fn items(n: usize) -> Vec<QAItem> {
        (0..n)
            .map(|i| QAItem {
                id: format!("q{i}"),
                question: "pick one".into(),
                options: ('A'..='D')
                    .map(|label| AnswerOption { label, body: format!("option {label}") })
                    .collect(),
                gold: ['B'].into_iter().collect(),
                domain_tag: "sim".into(),
            })
            .collect()
    }

    fn request(slot: usize, stage: Stage) -> GenerationRequest {
        GenerationRequest {
            slot,
            stage,
            prompt: "p".into(),
            max_tokens: 64,
            temperature: 1.0,
            attitude: if stage == Stage::Critic { Some(Attitude::Neutral) } else { None },
        }
    }

    fn engine(latency: LatencyDist, correct: f64, items_n: usize) -> SimulatedEngine {
        SimulatedEngine::new(
            LatencyModel { initial: latency.clone(), critic: latency, seed: 7 },
            AnswerModel { initial_correct: correct, critic_correct: correct, ..Default::default() },
            &items(items_n),
            None,
        )
    }

    #[test]
    fn deterministic_latency_finishes_on_schedule() {
        let mut e = engine(LatencyDist::Deterministic { values: vec![5.0] }, 1.0, 3);
        for slot in 0..3 {
            e.submit(request(slot, Stage::Initial));
        }
        let done = e.poll();
        assert_eq!(done.len(), 3);
        assert_eq!(e.elapsed(), 5.0);
        for c in &done {
            assert_eq!(c.latency, 5.0);
        }
    }

    #[test]
    fn correctness_probability_one_always_matches_gold() {
        let mut e = engine(LatencyDist::Deterministic { values: vec![1.0] }, 1.0, 4);
        for slot in 0..4 {
            e.submit(request(slot, Stage::Initial));
        }
        for c in e.poll() {
            assert!(c.solution.text.ends_with("\nB"), "text: {}", c.solution.text);
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let run = |seed: u64| -> Vec<String> {
            let mut e = SimulatedEngine::new(
                LatencyModel {
                    initial: LatencyDist::LogNormal { mu: 0.0, sigma: 1.0 },
                    critic: LatencyDist::LogNormal { mu: 0.0, sigma: 1.0 },
                    seed,
                },
                AnswerModel { initial_correct: 0.5, seed, ..Default::default() },
                &items(8),
                None,
            );
            for slot in 0..8 {
                e.submit(request(slot, Stage::Initial));
            }
            let mut texts = Vec::new();
            while texts.len() < 8 {
                for c in e.poll() {
                    texts.push(format!("{}:{}", c.slot, c.solution.text));
                }
            }
            texts.sort();
            texts
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn concurrency_limit_serializes_requests() {
        let mut e = SimulatedEngine::new(
            LatencyModel {
                initial: LatencyDist::Deterministic { values: vec![2.0] },
                critic: LatencyDist::Deterministic { values: vec![2.0] },
                seed: 0,
            },
            AnswerModel::default(),
            &items(4),
            Some(1),
        );
        for slot in 0..4 {
            e.submit(request(slot, Stage::Initial));
        }
        let mut done = 0;
        while done < 4 {
            done += e.poll().len();
        }
        // 4 requests of 2 units through a single lane take 8 units.
        assert_eq!(e.elapsed(), 8.0);
    }

    #[test]
    fn cancelled_requests_never_complete() {
        let mut e = engine(LatencyDist::Deterministic { values: vec![1.0, 2.0] }, 1.0, 2);
        let _h0 = e.submit(request(0, Stage::Initial));
        let h1 = e.submit(request(1, Stage::Initial));
        e.cancel(h1);
        let done = e.poll();
        assert_eq!(done.len(), 1);
        assert_eq!(done[0].slot, 0);
        assert!(e.poll().is_empty());
    }
}
