//! The inference abstraction behind the reranker.
//!
//! A [`Backend`] answers one prompt-window at a time, in either of two
//! modes:
//!
//! - **logits** — return the first-decode-step logits for every identifier
//!   in the window ([`Backend::first_token_logits`]); one decode step per
//!   window.
//! - **generate** — produce the whole identifier permutation as text
//!   ([`Backend::generate_permutation`]); the decode-step cost model charges
//!   one step per emitted identifier and one per separator, so a window of
//!   k documents costs `2k - 1` steps.
//!
//! Three implementations ship: [`OracleBackend`] (ranks by hidden relevance
//! scores; both modes always agree), [`ScriptedBackend`] (replays canned —
//! possibly malformed — responses for failure-path testing), and
//! [`HttpBackend`] (client for the wire contract below).
//!
//! # HTTP wire contract
//!
//! ```text
//! POST {base}/v1/rerank_window
//!   {"prompt": "...", "identifiers": ["A","B"], "mode": "logits"|"generate", "max_tokens": n}
//!   logits reply:    {"logits": {"A": -1.2, "B": 0.4}}
//!   generate reply:  {"text": "B > A", "decode_steps": 3}
//!
//! POST {base}/v1/check_identifiers
//!   {"identifiers": ["A","B"]}
//!   reply: {"violations": []}     // identifiers that are not a single token
//! ```
//!
//! A non-2xx status or a malformed body is a transport error, never a
//! silent reorder. Mock backends optionally simulate latency by sleeping
//! `decode_steps × simulated_per_token_latency` per call.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::IdentifierScheme;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend {backend:?} does not support {capability}")]
    Capability { backend: String, capability: &'static str },
    #[error("window must contain at least one passage")]
    EmptyWindow,
    #[error("identifier scheme must be non-empty")]
    EmptyScheme,
    #[error("scripted backend ran out of {0} responses")]
    ScriptExhausted(&'static str),
    #[error("transport: {0}")]
    Transport(String),
    #[error("backend response: {0}")]
    MalformedResponse(String),
}

/// A query plus an identifier-labeled window of passages, rendered into a
/// deterministic prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptWindow {
    pub query_text: String,
    /// `(identifier, passage text)` in window order; identifiers distinct.
    pub passages: Vec<(char, String)>,
    pub rendered_prompt: String,
    /// Identifiers whose passage text was cut to the character budget.
    pub truncated: Vec<char>,
}

impl PromptWindow {
    pub fn identifiers(&self) -> impl Iterator<Item = char> + '_ {
        self.passages.iter().map(|(c, _)| *c)
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }
}

/// Per-identifier scores from the first decode step. Exactly one finite
/// score per window identifier; the ordering is meaningful, the scale is
/// not (any monotone transform ranks identically).
#[derive(Debug, Clone, PartialEq)]
pub struct FirstTokenLogits {
    pub scores: BTreeMap<char, f64>,
}

impl FirstTokenLogits {
    /// Checks the exactly-one-finite-score-per-identifier invariant against
    /// a window.
    pub fn validate_for(&self, window: &PromptWindow) -> Result<(), BackendError> {
        for ident in window.identifiers() {
            match self.scores.get(&ident) {
                None => {
                    return Err(BackendError::MalformedResponse(format!(
                        "missing logit for identifier {ident:?}"
                    )))
                }
                Some(s) if !s.is_finite() => {
                    return Err(BackendError::MalformedResponse(format!(
                        "non-finite logit {s} for identifier {ident:?}"
                    )))
                }
                Some(_) => {}
            }
        }
        if self.scores.len() != window.len() {
            let extra: Vec<char> = self
                .scores
                .keys()
                .filter(|c| !window.identifiers().any(|w| w == **c))
                .copied()
                .collect();
            return Err(BackendError::MalformedResponse(format!(
                "extraneous identifiers in logits: {extra:?}"
            )));
        }
        Ok(())
    }
}

/// Raw generation output plus decode accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutput {
    pub raw_text: String,
    pub token_count: usize,
    /// Backend decode iterations; at least 1.
    pub decode_steps: usize,
}

/// What a backend can do, plus its mock latency knob.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendDescriptor {
    pub name: String,
    pub supports_logits: bool,
    pub supports_generation: bool,
    /// Mocks only: sleep `decode_steps × this` per call.
    pub simulated_per_token_latency: Option<Duration>,
}

/// An inference backend. Implementations must be safe for concurrent
/// requests; within one query the reranker issues window calls
/// sequentially.
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    /// First-decode-step logits for every identifier in the window.
    fn first_token_logits(&self, window: &PromptWindow) -> Result<FirstTokenLogits, BackendError>;

    /// The full identifier permutation as text, e.g. `"B > A > C"`.
    fn generate_permutation(&self, window: &PromptWindow) -> Result<GenerationOutput, BackendError>;

    /// Identifiers that do NOT map to exactly one vocabulary token.
    /// Empty means the scheme is safe to use.
    fn check_identifiers(&self, scheme: &IdentifierScheme) -> Result<Vec<String>, BackendError>;
}

/// Decode steps charged for an emitted text under the mock cost model: one
/// per whitespace-separated symbol (identifiers and separators alike),
/// minimum 1.
pub fn decode_steps_for_text(text: &str) -> usize {
    text.split_whitespace().count().max(1)
}

fn simulate_latency(latency: Option<Duration>, steps: usize) {
    if let Some(tau) = latency {
        std::thread::sleep(tau * steps as u32);
    }
}

/// FNV-1a, the hidden-score fallback hash.
fn fnv1a(text: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// A mock that knows the true relevance of every passage and ranks
/// perfectly. Logits are the hidden scores themselves, and generation emits
/// exactly the descending-score permutation, so the two inference paths
/// always agree.
///
/// Passages without an explicit hidden score fall back to a deterministic
/// hash of their text in `[0, 1)`.
pub struct OracleBackend {
    hidden: HashMap<String, f64>,
    latency: Option<Duration>,
}

impl OracleBackend {
    pub fn new(hidden: HashMap<String, f64>) -> Self {
        Self { hidden, latency: None }
    }

    /// Hash-scored oracle with no explicit table.
    pub fn hashed() -> Self {
        Self::new(HashMap::new())
    }

    pub fn with_latency(mut self, per_token: Duration) -> Self {
        self.latency = Some(per_token);
        self
    }

    pub fn hidden_score(&self, passage: &str) -> f64 {
        self.hidden
            .get(passage)
            .copied()
            .unwrap_or_else(|| (fnv1a(passage) >> 11) as f64 / (1u64 << 53) as f64)
    }

    /// Window positions sorted by descending hidden score, ties by window
    /// position.
    fn ranked_positions(&self, window: &PromptWindow) -> Vec<usize> {
        let scores: Vec<f64> =
            window.passages.iter().map(|(_, text)| self.hidden_score(text)).collect();
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        order
    }
}

impl Backend for OracleBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            name: "mock-oracle".into(),
            supports_logits: true,
            supports_generation: true,
            simulated_per_token_latency: self.latency,
        }
    }

    fn first_token_logits(&self, window: &PromptWindow) -> Result<FirstTokenLogits, BackendError> {
        if window.is_empty() {
            return Err(BackendError::EmptyWindow);
        }
        simulate_latency(self.latency, 1);
        let scores = window
            .passages
            .iter()
            .map(|(ident, text)| (*ident, self.hidden_score(text)))
            .collect();
        Ok(FirstTokenLogits { scores })
    }

    fn generate_permutation(&self, window: &PromptWindow) -> Result<GenerationOutput, BackendError> {
        if window.is_empty() {
            return Err(BackendError::EmptyWindow);
        }
        let order = self.ranked_positions(window);
        let raw_text = order
            .iter()
            .map(|&p| window.passages[p].0.to_string())
            .collect::<Vec<_>>()
            .join(" > ");
        let decode_steps = 2 * order.len() - 1;
        simulate_latency(self.latency, decode_steps);
        Ok(GenerationOutput { raw_text, token_count: decode_steps, decode_steps })
    }

    fn check_identifiers(&self, scheme: &IdentifierScheme) -> Result<Vec<String>, BackendError> {
        if scheme.size() == 0 {
            return Err(BackendError::EmptyScheme);
        }
        Ok(Vec::new())
    }
}

/// A mock that replays canned responses in order — including malformed
/// ones. The tool for exercising repair and failure paths.
pub struct ScriptedBackend {
    generations: Mutex<VecDeque<String>>,
    logits: Mutex<VecDeque<BTreeMap<char, f64>>>,
    latency: Option<Duration>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self {
            generations: Mutex::new(VecDeque::new()),
            logits: Mutex::new(VecDeque::new()),
            latency: None,
        }
    }

    pub fn with_generations<I, S>(self, texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.generations.lock().unwrap().extend(texts.into_iter().map(Into::into));
        self
    }

    pub fn with_logits<I>(self, maps: I) -> Self
    where
        I: IntoIterator<Item = BTreeMap<char, f64>>,
    {
        self.logits.lock().unwrap().extend(maps);
        self
    }

    pub fn with_latency(mut self, per_token: Duration) -> Self {
        self.latency = Some(per_token);
        self
    }

    pub fn push_generation(&self, text: impl Into<String>) {
        self.generations.lock().unwrap().push_back(text.into());
    }

    pub fn push_logits(&self, map: BTreeMap<char, f64>) {
        self.logits.lock().unwrap().push_back(map);
    }
}

impl Default for ScriptedBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl Backend for ScriptedBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            name: "mock-scripted".into(),
            supports_logits: true,
            supports_generation: true,
            simulated_per_token_latency: self.latency,
        }
    }

    fn first_token_logits(&self, window: &PromptWindow) -> Result<FirstTokenLogits, BackendError> {
        if window.is_empty() {
            return Err(BackendError::EmptyWindow);
        }
        let scores = self
            .logits
            .lock()
            .unwrap()
            .pop_front()
            .ok_or(BackendError::ScriptExhausted("logits"))?;
        simulate_latency(self.latency, 1);
        Ok(FirstTokenLogits { scores })
    }

    fn generate_permutation(&self, window: &PromptWindow) -> Result<GenerationOutput, BackendError> {
        if window.is_empty() {
            return Err(BackendError::EmptyWindow);
        }
        let raw_text = self
            .generations
            .lock()
            .unwrap()
            .pop_front()
            .ok_or(BackendError::ScriptExhausted("generation"))?;
        let decode_steps = decode_steps_for_text(&raw_text);
        simulate_latency(self.latency, decode_steps);
        Ok(GenerationOutput { token_count: decode_steps, decode_steps, raw_text })
    }

    fn check_identifiers(&self, scheme: &IdentifierScheme) -> Result<Vec<String>, BackendError> {
        if scheme.size() == 0 {
            return Err(BackendError::EmptyScheme);
        }
        Ok(Vec::new())
    }
}

#[derive(Serialize)]
struct WindowRequest<'a> {
    prompt: &'a str,
    identifiers: Vec<String>,
    mode: &'a str,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct LogitsResponse {
    logits: BTreeMap<String, f64>,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
    decode_steps: usize,
}

#[derive(Serialize)]
struct CheckRequest {
    identifiers: Vec<String>,
}

#[derive(Deserialize)]
struct CheckResponse {
    violations: Vec<String>,
}

/// HTTP client for a serving endpoint speaking the module-level wire
/// contract. Connection/timeout failures are retried up to `retries` extra
/// attempts; HTTP error statuses are not.
pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
    retries: u32,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, timeout: Duration, retries: u32) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        let base_url = base_url.into().trim_end_matches('/').to_string();
        Self { agent, base_url, retries }
    }

    fn post_json<T: serde::de::DeserializeOwned>(
        &self,
        path: &str,
        body: &impl Serialize,
    ) -> Result<T, BackendError> {
        let url = format!("{}{}", self.base_url, path);
        let mut last_err = None;
        for _ in 0..=self.retries {
            match self.agent.post(&url).send_json(body) {
                Ok(mut response) => {
                    let status = response.status();
                    if !status.is_success() {
                        return Err(BackendError::Transport(format!(
                            "{url}: HTTP {status}"
                        )));
                    }
                    return response
                        .body_mut()
                        .read_json::<T>()
                        .map_err(|e| BackendError::MalformedResponse(format!("{url}: {e}")));
                }
                Err(e) => last_err = Some(e),
            }
        }
        Err(BackendError::Transport(format!("{url}: {}", last_err.expect("at least one attempt"))))
    }
}

impl Backend for HttpBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            name: format!("http={}", self.base_url),
            supports_logits: true,
            supports_generation: true,
            simulated_per_token_latency: None,
        }
    }

    fn first_token_logits(&self, window: &PromptWindow) -> Result<FirstTokenLogits, BackendError> {
        if window.is_empty() {
            return Err(BackendError::EmptyWindow);
        }
        let request = WindowRequest {
            prompt: &window.rendered_prompt,
            identifiers: window.identifiers().map(String::from).collect(),
            mode: "logits",
            max_tokens: 1,
        };
        let response: LogitsResponse = self.post_json("/v1/rerank_window", &request)?;
        let mut scores = BTreeMap::new();
        for (key, value) in response.logits {
            let mut chars = key.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => {
                    scores.insert(c, value);
                }
                _ => {
                    return Err(BackendError::MalformedResponse(format!(
                        "logit key {key:?} is not a single identifier"
                    )))
                }
            }
        }
        let logits = FirstTokenLogits { scores };
        logits.validate_for(window)?;
        Ok(logits)
    }

    fn generate_permutation(&self, window: &PromptWindow) -> Result<GenerationOutput, BackendError> {
        if window.is_empty() {
            return Err(BackendError::EmptyWindow);
        }
        let request = WindowRequest {
            prompt: &window.rendered_prompt,
            identifiers: window.identifiers().map(String::from).collect(),
            mode: "generate",
            max_tokens: 2 * window.len(),
        };
        let response: GenerateResponse = self.post_json("/v1/rerank_window", &request)?;
        if response.decode_steps == 0 {
            return Err(BackendError::MalformedResponse("decode_steps must be >= 1".into()));
        }
        Ok(GenerationOutput {
            token_count: response.decode_steps,
            decode_steps: response.decode_steps,
            raw_text: response.text,
        })
    }

    fn check_identifiers(&self, scheme: &IdentifierScheme) -> Result<Vec<String>, BackendError> {
        if scheme.size() == 0 {
            return Err(BackendError::EmptyScheme);
        }
        let request =
            CheckRequest { identifiers: scheme.identifiers().iter().map(|c| c.to_string()).collect() };
        let response: CheckResponse = self.post_json("/v1/check_identifiers", &request)?;
        Ok(response.violations)
    }
}
