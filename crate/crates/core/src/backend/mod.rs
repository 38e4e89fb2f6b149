//! Language-model backends that score text continuations.
//!
//! A backend answers one question: given a context string and a continuation
//! string, what is the log-probability of each continuation token? Two
//! implementations are provided: a deterministic smoothed n-gram model
//! ([`NgramBackend`]) and a client for a remote log-probability service
//! ([`RemoteBackend`]) with a persistent, checksummed query cache.

pub mod cache;
pub mod ngram;
pub mod remote;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::ScoreCache;
pub use ngram::{NGramModel, NgramBackend, END_OF_TEXT_TOKEN, UNKNOWN_TOKEN};
pub use remote::RemoteBackend;

/// Errors produced by backend construction and scoring.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("continuation tokenizes to zero tokens")]
    EmptyContinuation,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("cache corrupt: {0}")]
    CacheCorrupt(String),
    #[error("cache io: {0}")]
    CacheIo(#[from] std::io::Error),
}

/// Per-token and total log-probabilities of a continuation, in nats.
///
/// `total_logprob` is always the sum of `token_logprobs`, and every entry is
/// `<= 0` and finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationScore {
    pub token_strings: Vec<String>,
    pub token_logprobs: Vec<f64>,
    pub total_logprob: f64,
    pub token_count: usize,
}

impl ContinuationScore {
    /// Builds a score from parallel token/log-prob lists, enforcing the type
    /// invariants. The total is computed here, never trusted from a caller.
    pub fn from_tokens(
        token_strings: Vec<String>,
        token_logprobs: Vec<f64>,
    ) -> Result<Self, BackendError> {
        if token_strings.is_empty() {
            return Err(BackendError::EmptyContinuation);
        }
        if token_strings.len() != token_logprobs.len() {
            return Err(BackendError::ProtocolError(format!(
                "token/logprob length mismatch: {} vs {}",
                token_strings.len(),
                token_logprobs.len()
            )));
        }
        for &lp in &token_logprobs {
            if !lp.is_finite() || lp > 0.0 {
                return Err(BackendError::ProtocolError(format!(
                    "token logprob {lp} is not a finite non-positive number"
                )));
            }
        }
        let total_logprob = token_logprobs.iter().sum();
        Ok(Self {
            token_count: token_strings.len(),
            token_strings,
            token_logprobs,
            total_logprob,
        })
    }
}

/// Which scoring backend to construct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Ngram,
    Remote,
}

/// Connection and cache settings for a backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub remote_url: Option<String>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_retries() -> u32 {
    2
}

impl BackendConfig {
    pub fn ngram() -> Self {
        Self {
            kind: BackendKind::Ngram,
            remote_url: None,
            cache_dir: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
        }
    }

    pub fn remote(url: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Remote,
            remote_url: Some(url.into()),
            cache_dir: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
        }
    }

    /// Applies `SERUM_REMOTE_URL` / `SERUM_CACHE_DIR` on top of the config.
    /// The lookup function is injected so callers can test without touching
    /// process environment.
    pub fn with_env_overrides(mut self, get: impl Fn(&str) -> Option<String>) -> Self {
        if let Some(url) = get("SERUM_REMOTE_URL") {
            if !url.is_empty() {
                self.remote_url = Some(url);
            }
        }
        if let Some(dir) = get("SERUM_CACHE_DIR") {
            if !dir.is_empty() {
                self.cache_dir = Some(PathBuf::from(dir));
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.kind == BackendKind::Remote
            && self.remote_url.as_deref().is_none_or(str::is_empty)
        {
            return Err(BackendError::InvalidParam(
                "remote backend requires a non-empty remote_url".into(),
            ));
        }
        if self.timeout_ms == 0 {
            return Err(BackendError::InvalidParam("timeout_ms must be positive".into()));
        }
        Ok(())
    }
}

/// A scoring backend. Implementations are read-only after construction and
/// safe to call from multiple threads.
pub trait Backend: Send + Sync {
    /// Identifier used in reports and cache keys.
    fn model_id(&self) -> &str;

    /// Log-probabilities of exactly the continuation's tokens, conditioned on
    /// the context prepended under the joining rule of [`join_context`].
    fn score_continuation(
        &self,
        context: &str,
        continuation: &str,
    ) -> Result<ContinuationScore, BackendError>;
}

/// Joins context and continuation with a single separating space (no
/// separator when the context is empty) and returns the concatenated string
/// together with the byte offset where the continuation begins. Token spans
/// starting at or after the offset belong to the continuation.
pub fn join_context(context: &str, continuation: &str) -> (String, usize) {
    if context.is_empty() {
        (continuation.to_string(), 0)
    } else {
        (format!("{context} {continuation}"), context.len() + 1)
    }
}

/// Lowercased whitespace tokenization with the byte offset of each token in
/// the original string.
pub(crate) fn tokenize_with_offsets(text: &str) -> Vec<(usize, String)> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (idx, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push((s, text[s..idx].to_lowercase()));
            }
        } else if start.is_none() {
            start = Some(idx);
        }
    }
    if let Some(s) = start {
        tokens.push((s, text[s..].to_lowercase()));
    }
    tokens
}

/// Lowercased whitespace tokenization (offsets discarded).
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_offsets(text).into_iter().map(|(_, t)| t).collect()
}
