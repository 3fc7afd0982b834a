//! Remote generation engine speaking the chat-completion wire format.
//!
//! Requests run on worker threads up to a configurable concurrency limit;
//! results flow back over a channel that `poll` drains. Failures (non-2xx,
//! timeout, malformed body) surface per request as `EngineError` solutions,
//! never as panics or batch aborts.

use std::collections::{HashSet, VecDeque};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::rollout::engine::{Completion, GenerationEngine, GenerationRequest, RequestHandle};
use crate::types::{FinishReason, Solution};

/// Environment variable naming the chat-completion base URL.
pub const ENV_BASE_URL: &str = "RECRIT_API_BASE_URL";
/// Environment variable naming the bearer token; optional.
pub const ENV_API_KEY: &str = "RECRIT_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HttpEngineConfig {
    /// Model name sent with each request.
    pub model: String,
    /// Maximum concurrent in-flight requests.
    pub concurrency: usize,
    pub timeout_secs: u64,
}

impl Default for HttpEngineConfig {
    fn default() -> Self {
        HttpEngineConfig {
            model: "default".into(),
            concurrency: 8,
            timeout_secs: 120,
        }
    }
}

#[derive(Serialize)]
struct ChatRequest {
    model: String,
    messages: Vec<ChatMessage>,
    max_tokens: usize,
    temperature: f64,
}

#[derive(Serialize, Deserialize)]
struct ChatMessage {
    role: String,
    content: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    completion_tokens: Option<usize>,
}

struct WorkerResult {
    handle: RequestHandle,
    slot: usize,
    stage: crate::types::Stage,
    solution: Solution,
    latency: f64,
}

/// Chat-completion engine over HTTP. Base URL and auth token come from the
/// `RECRIT_API_BASE_URL` / `RECRIT_API_KEY` environment variables.
pub struct HttpEngine {
    config: HttpEngineConfig,
    base_url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    tx: Sender<WorkerResult>,
    rx: Receiver<WorkerResult>,
    next_handle: u64,
    in_flight: usize,
    queued: VecDeque<(RequestHandle, GenerationRequest)>,
    cancelled: HashSet<RequestHandle>,
    started: Instant,
}

#[derive(Debug, thiserror::Error)]
pub enum HttpEngineError {
    #[error("{ENV_BASE_URL} is not set")]
    MissingBaseUrl,
    #[error("failed to build HTTP client: {0}")]
    Client(#[from] reqwest::Error),
}

impl HttpEngine {
    pub fn from_env(config: HttpEngineConfig) -> Result<Self, HttpEngineError> {
        let base_url = std::env::var(ENV_BASE_URL).map_err(|_| HttpEngineError::MissingBaseUrl)?;
        let api_key = std::env::var(ENV_API_KEY).ok();
        Self::new(config, base_url, api_key)
    }

    pub fn new(
        config: HttpEngineConfig,
        base_url: String,
        api_key: Option<String>,
    ) -> Result<Self, HttpEngineError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()?;
        let (tx, rx) = channel();
        Ok(HttpEngine {
            config,
            base_url,
            api_key,
            client,
            tx,
            rx,
            next_handle: 0,
            in_flight: 0,
            queued: VecDeque::new(),
            cancelled: HashSet::new(),
            started: Instant::now(),
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url.trim_end_matches('/'))
    }

    fn spawn(&mut self, handle: RequestHandle, request: GenerationRequest) {
        self.in_flight += 1;
        let client = self.client.clone();
        let url = self.endpoint();
        let api_key = self.api_key.clone();
        let model = self.config.model.clone();
        let tx = self.tx.clone();
        let submit_time = Instant::now();
        std::thread::spawn(move || {
            let solution = perform(&client, &url, api_key.as_deref(), &model, &request);
            // Receiver gone means the engine was dropped; nothing to do.
            let _ = tx.send(WorkerResult {
                handle,
                slot: request.slot,
                stage: request.stage,
                solution,
                latency: submit_time.elapsed().as_secs_f64(),
            });
        });
    }

    fn dispatch_queued(&mut self) {
        while self.in_flight < self.config.concurrency {
            match self.queued.pop_front() {
                Some((handle, req)) => {
                    if self.cancelled.remove(&handle) {
                        continue;
                    }
                    self.spawn(handle, req);
                }
                None => break,
            }
        }
    }
}

fn perform(
    client: &reqwest::blocking::Client,
    url: &str,
    api_key: Option<&str>,
    model: &str,
    request: &GenerationRequest,
) -> Solution {
    let body = ChatRequest {
        model: model.to_string(),
        messages: vec![ChatMessage {
            role: "user".into(),
            content: request.prompt.clone(),
        }],
        max_tokens: request.max_tokens,
        temperature: request.temperature,
    };
    let mut req = client.post(url).json(&body);
    if let Some(key) = api_key {
        req = req.bearer_auth(key);
    }
    let error_solution = || Solution {
        text: String::new(),
        stage: request.stage,
        finish_reason: FinishReason::EngineError,
        token_count: Some(0),
    };
    let resp = match req.send() {
        Ok(r) => r,
        Err(_) => return error_solution(),
    };
    if !resp.status().is_success() {
        return error_solution();
    }
    let parsed: ChatResponse = match resp.json() {
        Ok(p) => p,
        Err(_) => return error_solution(),
    };
    let Some(choice) = parsed.choices.into_iter().next() else {
        return error_solution();
    };
    let finish_reason = match choice.finish_reason.as_deref() {
        Some("length") => FinishReason::LengthBudget,
        _ => FinishReason::Complete,
    };
    Solution {
        text: choice.message.content,
        stage: request.stage,
        finish_reason,
        token_count: parsed.usage.and_then(|u| u.completion_tokens),
    }
}

impl GenerationEngine for HttpEngine {
    fn submit(&mut self, request: GenerationRequest) -> RequestHandle {
        let handle = RequestHandle(self.next_handle);
        self.next_handle += 1;
        if self.in_flight < self.config.concurrency && self.queued.is_empty() {
            self.spawn(handle, request);
        } else {
            self.queued.push_back((handle, request));
        }
        handle
    }

    fn poll(&mut self) -> Vec<Completion> {
        let mut completions = Vec::new();
        loop {
            if self.in_flight == 0 {
                self.dispatch_queued();
                if self.in_flight == 0 {
                    return completions;
                }
            }
            // Block for the first result, then drain whatever else is ready.
            let first = match self.rx.recv() {
                Ok(r) => r,
                Err(_) => return completions,
            };
            self.in_flight -= 1;
            let mut results = vec![first];
            while let Ok(r) = self.rx.try_recv() {
                self.in_flight -= 1;
                results.push(r);
            }
            self.dispatch_queued();
            for r in results {
                if self.cancelled.remove(&r.handle) {
                    continue;
                }
                completions.push(Completion {
                    handle: r.handle,
                    slot: r.slot,
                    stage: r.stage,
                    solution: r.solution,
                    latency: r.latency,
                });
            }
            if !completions.is_empty() {
                return completions;
            }
        }
    }

    fn cancel(&mut self, handle: RequestHandle) {
        self.cancelled.insert(handle);
        self.queued.retain(|(h, _)| *h != handle);
    }

    fn elapsed(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }
}
