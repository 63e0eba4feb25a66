//! The sampler contract shared by every decoder.
//!
//! A backend turns a prompt into `n` continuations, each with the summed
//! log-probability of its text. Nothing below segment granularity is
//! exposed, so any hosted completion endpoint can sit behind [`Sampler`].

mod mock;
mod remote;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{configure_mock, Continuation, MockBackend, MockScript, ScriptRule};
pub use remote::{RateLimiter, RemoteBackend, RemoteConfig};

/// Identifies one sampling call site. The mock derives an independent random
/// stream from it, so results do not depend on call order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub salt: u64,
    pub iteration: u64,
    pub beam: u64,
    pub group: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRequest {
    pub prompt: String,
    pub temperature: f64,
    pub n: usize,
    pub max_tokens: usize,
    pub stop_sequences: Vec<String>,
    #[serde(default)]
    pub stream: StreamKey,
}

impl SampleRequest {
    pub fn new(prompt: impl Into<String>, temperature: f64, n: usize, max_tokens: usize) -> Self {
        SampleRequest {
            prompt: prompt.into(),
            temperature,
            n,
            max_tokens,
            stop_sequences: Vec::new(),
            stream: StreamKey::default(),
        }
    }

    pub fn with_stop(mut self, stop: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.stop_sequences = stop.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_stream(mut self, stream: StreamKey) -> Self {
        self.stream = stream;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.n == 0 {
            return Err(BackendError::InvalidRequest("n must be at least 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be finite and non-negative, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    MaxTokens,
    End,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub text: String,
    /// Sum of token log-probabilities of `text`.
    pub logprob: f64,
    pub token_count: usize,
    pub truncated_by: FinishReason,
}

impl SampleResult {
    /// Remote results are passed through unchecked; a positive sum means the
    /// endpoint is not returning normalized log-probabilities.
    pub fn logprob_suspicious(&self) -> bool {
        self.logprob > 0.0
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid sample request: {0}")]
    InvalidRequest(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("quota exhausted: {0}")]
    Quota(String),
    #[error("endpoint rejected the request ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("malformed endpoint response: {0}")]
    Protocol(String),
    #[error("unscripted prompt (no rule matches ...{0:?})")]
    Unscripted(String),
    #[error("invalid mock script: {0}")]
    InvalidScript(String),
}

impl BackendError {
    /// Transport failures can be retried by the caller; everything else is
    /// terminal.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

/// Token and call accounting kept by each backend.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub requests: u64,
    pub samples: u64,
    pub generated_tokens: u64,
}

#[derive(Debug, Default)]
pub(crate) struct CostMeter {
    requests: AtomicU64,
    samples: AtomicU64,
    tokens: AtomicU64,
}

impl CostMeter {
    pub(crate) fn record(&self, results: &[SampleResult]) {
        self.requests.fetch_add(1, Ordering::Relaxed);
        self.samples.fetch_add(results.len() as u64, Ordering::Relaxed);
        let tokens: usize = results.iter().map(|r| r.token_count).sum();
        self.tokens.fetch_add(tokens as u64, Ordering::Relaxed);
    }

    pub(crate) fn snapshot(&self) -> Usage {
        Usage {
            requests: self.requests.load(Ordering::Relaxed),
            samples: self.samples.load(Ordering::Relaxed),
            generated_tokens: self.tokens.load(Ordering::Relaxed),
        }
    }
}

pub trait Sampler: Send + Sync {
    /// Draws `request.n` continuations. Each text ends at the first stop
    /// sequence (excluded), at `max_tokens`, or where the model ended.
    fn sample(&self, request: &SampleRequest) -> Result<Vec<SampleResult>, BackendError>;

    fn count_tokens(&self, text: &str) -> usize;

    /// Cumulative usage since construction.
    fn usage(&self) -> Usage;
}

impl<T: Sampler + ?Sized> Sampler for std::sync::Arc<T> {
    fn sample(&self, request: &SampleRequest) -> Result<Vec<SampleResult>, BackendError> {
        (**self).sample(request)
    }

    fn count_tokens(&self, text: &str) -> usize {
        (**self).count_tokens(text)
    }

    fn usage(&self) -> Usage {
        (**self).usage()
    }
}

/// Whitespace token count used by the mock backend.
pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}
