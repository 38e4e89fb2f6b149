//! Client for a remote log-probability service.
//!
//! Wire protocol: `POST <remote_url>/v1/logprobs` with JSON body
//! `{"model", "context", "continuation"}`; the service answers
//! `{"model", "tokens", "token_logprobs"}` with log-probabilities in nats.
//! A non-200 status, an array-length mismatch or an empty token list is a
//! protocol error. Transport failures are retried with exponential backoff
//! (the request is idempotent) and results are written through to the
//! persistent cache keyed by (model, context, continuation).

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::cache::{cache_key, ScoreCache};
use super::{Backend, BackendConfig, BackendError, ContinuationScore};

const LOGPROBS_PATH: &str = "/v1/logprobs";
const DEFAULT_BACKOFF: Duration = Duration::from_millis(250);

#[derive(Serialize)]
struct LogprobRequest<'a> {
    model: &'a str,
    context: &'a str,
    continuation: &'a str,
}

#[derive(Deserialize)]
struct LogprobResponse {
    #[allow(dead_code)]
    model: String,
    tokens: Vec<String>,
    token_logprobs: Vec<f64>,
}

pub struct RemoteBackend {
    model: String,
    endpoint: String,
    client: reqwest::blocking::Client,
    max_retries: u32,
    backoff: Duration,
    cache: Option<ScoreCache>,
    requests_issued: AtomicU64,
}

impl RemoteBackend {
    pub fn new(config: &BackendConfig, model: impl Into<String>) -> Result<Self, BackendError> {
        config.validate()?;
        let base = config
            .remote_url
            .as_deref()
            .ok_or_else(|| BackendError::InvalidParam("remote_url is required".into()))?;
        let endpoint = format!("{}{LOGPROBS_PATH}", base.trim_end_matches('/'));
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::BackendUnavailable(e.to_string()))?;
        let cache = match &config.cache_dir {
            Some(dir) => Some(ScoreCache::open(dir)?),
            None => None,
        };
        Ok(Self {
            model: model.into(),
            endpoint,
            client,
            max_retries: config.max_retries,
            backoff: DEFAULT_BACKOFF,
            cache,
            requests_issued: AtomicU64::new(0),
        })
    }

    /// Shortens the retry backoff; intended for tests against local mock
    /// servers.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    /// Number of HTTP requests actually sent (cache hits issue none).
    pub fn requests_issued(&self) -> u64 {
        self.requests_issued.load(Ordering::Relaxed)
    }

    pub fn cache(&self) -> Option<&ScoreCache> {
        self.cache.as_ref()
    }

    fn fetch(&self, context: &str, continuation: &str) -> Result<ContinuationScore, BackendError> {
        let request = LogprobRequest {
            model: &self.model,
            context,
            continuation,
        };
        let mut attempt = 0;
        let response = loop {
            self.requests_issued.fetch_add(1, Ordering::Relaxed);
            match self.client.post(&self.endpoint).json(&request).send() {
                Ok(resp) => break resp,
                Err(err) => {
                    if attempt >= self.max_retries {
                        return Err(BackendError::BackendUnavailable(format!(
                            "{} after {} attempts: {err}",
                            self.endpoint,
                            attempt + 1
                        )));
                    }
                    std::thread::sleep(self.backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
            }
        };

        let status = response.status();
        if status != reqwest::StatusCode::OK {
            return Err(BackendError::ProtocolError(format!(
                "server returned status {status}"
            )));
        }
        let body: LogprobResponse = response
            .json()
            .map_err(|e| BackendError::ProtocolError(format!("malformed response body: {e}")))?;
        if body.tokens.is_empty() {
            return Err(BackendError::ProtocolError(
                "server returned zero tokens".into(),
            ));
        }
        ContinuationScore::from_tokens(body.tokens, body.token_logprobs)
            .map_err(|e| match e {
                BackendError::EmptyContinuation => {
                    BackendError::ProtocolError("server returned zero tokens".into())
                }
                other => other,
            })
    }
}

impl Backend for RemoteBackend {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn score_continuation(
        &self,
        context: &str,
        continuation: &str,
    ) -> Result<ContinuationScore, BackendError> {
        if continuation.is_empty() {
            return Err(BackendError::EmptyContinuation);
        }
        let key = cache_key(&self.model, context, continuation);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key) {
                return Ok(hit);
            }
        }
        let score = self.fetch(context, continuation)?;
        if let Some(cache) = &self.cache {
            cache.put(&key, &score)?;
        }
        Ok(score)
    }
}
