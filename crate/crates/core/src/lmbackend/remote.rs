//! Client for an HTTP completions endpoint.
//!
//! Speaks the common completions wire format: POST `{model, prompt,
//! temperature, n, max_tokens, stop, logprobs}` and read
//! `choices[].{text, logprobs.token_logprobs, finish_reason}`.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{whitespace_tokens, BackendError, CostMeter, FinishReason, SampleRequest, SampleResult, Sampler, Usage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    /// Optional endpoint answering `{model, prompt}` with `{"count": n}` or
    /// `{"tokens": [...]}`.
    pub tokenize_endpoint: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub max_in_flight: usize,
    pub requests_per_minute: u32,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "http://127.0.0.1:8000/v1/completions".into(),
            model: String::new(),
            api_key: None,
            tokenize_endpoint: None,
            timeout_secs: 120,
            max_retries: 4,
            base_backoff_ms: 500,
            max_backoff_ms: 30_000,
            max_in_flight: 8,
            requests_per_minute: 600,
        }
    }
}

impl RemoteConfig {
    /// Overrides fields from `GROUNDPROVER_*` environment variables.
    /// `OPENAI_API_KEY` is used when no key is set otherwise.
    pub fn apply_env(mut self) -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        if let Some(v) = var("GROUNDPROVER_ENDPOINT") {
            self.endpoint = v;
        }
        if let Some(v) = var("GROUNDPROVER_MODEL") {
            self.model = v;
        }
        if let Some(v) = var("GROUNDPROVER_TOKENIZE_ENDPOINT") {
            self.tokenize_endpoint = Some(v);
        }
        if let Some(v) = var("GROUNDPROVER_API_KEY").or_else(|| var("OPENAI_API_KEY")) {
            self.api_key = Some(v);
        }
        if let Some(v) = var("GROUNDPROVER_TIMEOUT_SECS").and_then(|v| v.parse().ok()) {
            self.timeout_secs = v;
        }
        if let Some(v) = var("GROUNDPROVER_MAX_RETRIES").and_then(|v| v.parse().ok()) {
            self.max_retries = v;
        }
        self
    }
}

/// Token bucket over two limits: requests in flight, and requests started in
/// any sliding one-minute window.
#[derive(Debug)]
pub struct RateLimiter {
    max_in_flight: usize,
    per_minute: u32,
    state: Mutex<LimiterState>,
    cv: Condvar,
}

#[derive(Debug, Default)]
struct LimiterState {
    in_flight: usize,
    started: VecDeque<Instant>,
}

pub struct Permit<'a> {
    limiter: &'a RateLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut s = self.limiter.state.lock().unwrap();
        s.in_flight -= 1;
        self.limiter.cv.notify_one();
    }
}

impl RateLimiter {
    pub fn new(max_in_flight: usize, per_minute: u32) -> Self {
        RateLimiter {
            max_in_flight: max_in_flight.max(1),
            per_minute: per_minute.max(1),
            state: Mutex::new(LimiterState::default()),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let window = Duration::from_secs(60);
        let mut s = self.state.lock().unwrap();
        loop {
            let now = Instant::now();
            while s.started.front().is_some_and(|t| now.duration_since(*t) >= window) {
                s.started.pop_front();
            }
            if s.in_flight < self.max_in_flight && s.started.len() < self.per_minute as usize {
                s.in_flight += 1;
                s.started.push_back(now);
                return Permit { limiter: self };
            }
            let wait = if s.in_flight >= self.max_in_flight {
                window
            } else {
                window - now.duration_since(*s.started.front().expect("window is full"))
            };
            s = self.cv.wait_timeout(s, wait).unwrap().0;
        }
    }

    pub fn in_flight(&self) -> usize {
        self.state.lock().unwrap().in_flight
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    limiter: RateLimiter,
    meter: CostMeter,
}

enum Attempt {
    Retry(String),
    Fail(BackendError),
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::InvalidRequest(format!("building HTTP client: {e}")))?;
        let limiter = RateLimiter::new(config.max_in_flight, config.requests_per_minute);
        Ok(RemoteBackend {
            config,
            client,
            limiter,
            meter: CostMeter::default(),
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .config
            .base_backoff_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.config.max_backoff_ms);
        Duration::from_millis(ms)
    }

    fn post_once(&self, url: &str, body: &Value) -> Result<Value, Attempt> {
        let _permit = self.limiter.acquire();
        let mut req = self.client.post(url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| Attempt::Fail(BackendError::Protocol(format!("{e}: {text}")))),
            401 | 403 => Err(Attempt::Fail(BackendError::Auth(text))),
            402 => Err(Attempt::Fail(BackendError::Quota(text))),
            429 if text.contains("insufficient_quota") => Err(Attempt::Fail(BackendError::Quota(text))),
            408 | 409 | 429 | 500..=599 => Err(Attempt::Retry(format!("status {status}: {text}"))),
            _ => Err(Attempt::Fail(BackendError::Rejected { status, message: text })),
        }
    }

    fn post_with_retry(&self, url: &str, body: &Value) -> Result<Value, BackendError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.post_once(url, body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(message)) => {
                    if attempts > self.config.max_retries {
                        return Err(BackendError::Transport { attempts, message });
                    }
                    tracing::warn!(attempts, %message, "completion request failed, retrying");
                    std::thread::sleep(self.backoff(attempts - 1));
                }
            }
        }
    }
}

fn parse_choice(choice: &Value, has_stop: bool) -> Result<SampleResult, BackendError> {
    let text = choice
        .get("text")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Protocol("choice without text".into()))?
        .to_string();
    let lp = choice.get("logprobs");
    let token_logprobs = lp
        .and_then(|l| l.get("token_logprobs"))
        .and_then(Value::as_array)
        .ok_or_else(|| BackendError::Protocol("choice without logprobs.token_logprobs".into()))?;
    let logprob = token_logprobs.iter().filter_map(Value::as_f64).sum();
    let token_count = lp
        .and_then(|l| l.get("tokens"))
        .and_then(Value::as_array)
        .map(Vec::len)
        .unwrap_or(token_logprobs.len());
    let truncated_by = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("length") => FinishReason::MaxTokens,
        Some("stop") if has_stop => FinishReason::Stop,
        _ => FinishReason::End,
    };
    Ok(SampleResult {
        text,
        logprob,
        token_count,
        truncated_by,
    })
}

impl Sampler for RemoteBackend {
    fn sample(&self, request: &SampleRequest) -> Result<Vec<SampleResult>, BackendError> {
        request.validate()?;
        let mut body = json!({
            "model": self.config.model,
            "prompt": request.prompt,
            "temperature": request.temperature,
            "n": request.n,
            "max_tokens": request.max_tokens,
            "logprobs": 1,
        });
        if !request.stop_sequences.is_empty() {
            body["stop"] = json!(request.stop_sequences);
        }
        let resp = self.post_with_retry(&self.config.endpoint, &body)?;
        let choices = resp
            .get("choices")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::Protocol("response without choices".into()))?;
        let mut indexed = choices
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let idx = c.get("index").and_then(Value::as_u64).unwrap_or(i as u64);
                parse_choice(c, !request.stop_sequences.is_empty()).map(|r| (idx, r))
            })
            .collect::<Result<Vec<_>, _>>()?;
        indexed.sort_by_key(|(i, _)| *i);
        let mut results: Vec<SampleResult> = indexed.into_iter().map(|(_, r)| r).collect();
        results.truncate(request.n);
        for r in results.iter().filter(|r| r.logprob_suspicious()) {
            tracing::warn!(logprob = r.logprob, "endpoint returned a positive log-probability");
        }
        self.meter.record(&results);
        Ok(results)
    }

    /// Uses the tokenize endpoint when configured, otherwise estimates four
    /// bytes per token (never fewer than the whitespace count).
    fn count_tokens(&self, text: &str) -> usize {
        if let Some(url) = &self.config.tokenize_endpoint {
            let body = json!({"model": self.config.model, "prompt": text});
            match self.post_with_retry(url, &body) {
                Ok(v) => {
                    if let Some(n) = v.get("count").and_then(Value::as_u64) {
                        return n as usize;
                    }
                    if let Some(t) = v.get("tokens").and_then(Value::as_array) {
                        return t.len();
                    }
                    tracing::warn!("tokenize endpoint returned no count; estimating");
                }
                Err(e) => tracing::warn!(error = %e, "tokenize endpoint failed; estimating"),
            }
        }
        text.len().div_ceil(4).max(whitespace_tokens(text))
    }

    fn usage(&self) -> Usage {
        self.meter.snapshot()
    }
}
