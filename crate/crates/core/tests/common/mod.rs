//! Shared helpers for the integration suites: an independent brute-force
//! probability oracle, a naive selector reference, a rigged in-memory
//! backend, and a minimal HTTP mock for the log-probability wire protocol.
//!
//! Nothing here calls into the code paths under test: the oracle counts
//! n-grams by scanning the corpus directly, and the naive selectors are
//! direct transcriptions of the method definitions.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::Rng;
use serum_core::backend::{Backend, BackendError, ContinuationScore};

pub const UNK: &str = "<unk>";
pub const EOT: &str = "<eot>";

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(|w| w.to_lowercase()).collect()
}

/// Brute-force log-probability of `continuation` after `context` under an
/// add-k smoothed n-gram model trained on `corpus`: every count is obtained
/// by rescanning the token list, never via the library's count tables.
/// Returns `None` for an empty continuation.
pub fn oracle_logprob(
    corpus: &str,
    order: usize,
    k: f64,
    context: &str,
    continuation: &str,
) -> Option<f64> {
    let tokens = words(corpus);
    assert!(!tokens.is_empty(), "oracle needs a non-empty corpus");
    let mut vocab: HashSet<String> = tokens.iter().cloned().collect();
    vocab.insert(UNK.to_string());
    vocab.insert(EOT.to_string());
    let v = vocab.len() as f64;
    let map = |w: String| -> String {
        if vocab.contains(&w) {
            w
        } else {
            UNK.to_string()
        }
    };

    let mut history: Vec<String> = words(context).into_iter().map(map).collect();
    let cont_tokens: Vec<String> = words(continuation);
    if cont_tokens.is_empty() {
        return None;
    }

    let mut total_logprob = 0.0;
    for raw in cont_tokens {
        let token = if vocab.contains(&raw) { raw } else { UNK.to_string() };
        let window_len = (order - 1).min(history.len());
        let window = &history[history.len() - window_len..];

        let mut ctx_occurrences = 0u64;
        let mut follow_count = 0u64;
        for i in 0..tokens.len() {
            if i >= window_len && tokens[i - window_len..i] == *window {
                ctx_occurrences += 1;
                if tokens[i] == token {
                    follow_count += 1;
                }
            }
        }
        total_logprob +=
            ((follow_count as f64 + k) / (ctx_occurrences as f64 + k * v)).ln();
        history.push(token);
    }
    Some(total_logprob)
}

/// Random lowercase corpus over a small vocabulary: at most `max_tokens`
/// tokens, never empty.
pub fn random_corpus(rng: &mut StdRng, max_tokens: usize) -> String {
    let vocab_size = rng.gen_range(2..=6);
    let vocab: Vec<String> = (0..vocab_size)
        .map(|i| {
            let c = (b'a' + (i % 26) as u8) as char;
            if i < 26 {
                c.to_string()
            } else {
                format!("{c}{}", i / 26)
            }
        })
        .collect();
    let len = rng.gen_range(1..=max_tokens);
    (0..len)
        .map(|_| vocab[rng.gen_range(0..vocab.len())].clone())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Random phrase over the corpus vocabulary plus occasional unseen words.
pub fn random_phrase(rng: &mut StdRng, corpus: &str, max_len: usize, allow_empty: bool) -> String {
    let mut vocab: Vec<String> = words(corpus)
        .into_iter()
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    vocab.sort();
    let min = usize::from(!allow_empty);
    let len = rng.gen_range(min..=max_len);
    (0..len)
        .map(|_| {
            if rng.gen_bool(0.15) {
                "zzz".to_string()
            } else {
                vocab[rng.gen_range(0..vocab.len())].clone()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

// ---------------------------------------------------------------------------
// Naive selector reference
// ---------------------------------------------------------------------------

/// Plain-f64 transcription of the six method definitions; valid for inputs
/// whose probabilities do not underflow (logs above about -700).
pub mod naive {
    pub fn argmax(scores: &[f64]) -> usize {
        let mut best = 0;
        for i in 1..scores.len() {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_post(posts: &[f64]) -> usize {
        argmax(posts)
    }

    pub fn max_post_n(posts: &[f64], tokens: &[usize]) -> usize {
        let scores: Vec<f64> = posts
            .iter()
            .zip(tokens)
            .map(|(p, &n)| p / n as f64)
            .collect();
        argmax(&scores)
    }

    pub fn max_ratio(posts: &[f64], priors: &[f64]) -> usize {
        let scores: Vec<f64> = posts.iter().zip(priors).map(|(p, q)| p - q).collect();
        argmax(&scores)
    }

    pub fn max_diff(posts: &[f64], priors: &[f64]) -> usize {
        let scores: Vec<f64> = posts
            .iter()
            .zip(priors)
            .map(|(p, q)| p.exp() - q.exp())
            .collect();
        argmax(&scores)
    }

    /// Shortlist of the k highest posts (ties to lowest index), built by
    /// repeated scanning.
    fn shortlist(posts: &[f64], k: usize) -> Vec<usize> {
        let mut taken = vec![false; posts.len()];
        let mut out = Vec::new();
        for _ in 0..k.min(posts.len()) {
            let mut best: Option<usize> = None;
            for i in 0..posts.len() {
                if taken[i] {
                    continue;
                }
                best = match best {
                    None => Some(i),
                    Some(b) if posts[i] > posts[b] => Some(i),
                    keep => keep,
                };
            }
            let b = best.unwrap();
            taken[b] = true;
            out.push(b);
        }
        out
    }

    pub fn top_k_min_prior(posts: &[f64], priors: &[f64], k: usize) -> usize {
        let short = shortlist(posts, k);
        let mut chosen = short[0];
        for &i in &short {
            if priors[i] < priors[chosen] || (priors[i] == priors[chosen] && i < chosen) {
                chosen = i;
            }
        }
        chosen
    }

    pub fn top_k_max_prior(posts: &[f64], priors: &[f64], k: usize) -> usize {
        let short = shortlist(posts, k);
        let mut chosen = short[0];
        for &i in &short {
            if priors[i] > priors[chosen] || (priors[i] == priors[chosen] && i < chosen) {
                chosen = i;
            }
        }
        chosen
    }
}

// ---------------------------------------------------------------------------
// Rigged backend
// ---------------------------------------------------------------------------

/// Backend that serves per-token log-probs from a fixed table, with a
/// uniform fallback. Tokens are whitespace words of the continuation.
pub struct TableBackend {
    pub scores: HashMap<(String, String), Vec<f64>>,
    pub fallback_per_token: f64,
    pub fail_on: Option<String>,
    calls: AtomicU64,
}

impl TableBackend {
    pub fn new() -> Self {
        Self {
            scores: HashMap::new(),
            fallback_per_token: -1.0,
            fail_on: None,
            calls: AtomicU64::new(0),
        }
    }

    pub fn set(&mut self, context: &str, continuation: &str, token_logprobs: Vec<f64>) {
        self.scores
            .insert((context.to_string(), continuation.to_string()), token_logprobs);
    }

    /// Convenience: single pseudo-token with the given total.
    pub fn set_total(&mut self, context: &str, continuation: &str, total: f64) {
        self.set(context, continuation, vec![total]);
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Backend for TableBackend {
    fn model_id(&self) -> &str {
        "rigged"
    }

    fn score_continuation(
        &self,
        context: &str,
        continuation: &str,
    ) -> Result<ContinuationScore, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if let Some(bad) = &self.fail_on {
            if continuation == bad {
                return Err(BackendError::BackendUnavailable("rigged failure".into()));
            }
        }
        let tokens: Vec<String> = continuation
            .split_whitespace()
            .map(str::to_string)
            .collect();
        if tokens.is_empty() {
            return Err(BackendError::EmptyContinuation);
        }
        let logprobs = match self
            .scores
            .get(&(context.to_string(), continuation.to_string()))
        {
            Some(given) => {
                assert_eq!(
                    given.len(),
                    tokens.len(),
                    "rigged entry must match token count for ({context:?}, {continuation:?})"
                );
                given.clone()
            }
            None => vec![self.fallback_per_token; tokens.len()],
        };
        ContinuationScore::from_tokens(tokens, logprobs)
    }
}

// ---------------------------------------------------------------------------
// Mock log-probability server
// ---------------------------------------------------------------------------

#[derive(serde::Deserialize, Debug, Clone)]
pub struct WireRequest {
    pub model: String,
    pub context: String,
    pub continuation: String,
}

/// What the mock returns for one request.
pub struct WireResponse {
    pub status: u16,
    pub body: String,
}

impl WireResponse {
    /// Well-formed response: whitespace tokens of the continuation with a
    /// deterministic per-token log-prob derived from the request.
    pub fn ok_for(req: &WireRequest) -> WireResponse {
        let tokens: Vec<String> = req
            .continuation
            .split_whitespace()
            .map(str::to_string)
            .collect();
        let logprobs: Vec<f64> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                -(0.25 * (i + 1) as f64 + 0.01 * req.context.len() as f64
                    + 0.1 * t.len() as f64)
            })
            .collect();
        let body = serde_json::json!({
            "model": req.model,
            "tokens": tokens,
            "token_logprobs": logprobs,
        });
        WireResponse {
            status: 200,
            body: body.to_string(),
        }
    }
}

/// Minimal single-purpose HTTP/1.1 server for the logprobs protocol. Each
/// connection handles one request. Responses come from the supplied closure.
pub struct MockServer {
    addr: String,
    requests: Arc<AtomicU64>,
}

impl MockServer {
    pub fn start<F>(responder: F) -> MockServer
    where
        F: Fn(&WireRequest) -> WireResponse + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicU64::new(0));
        let counter = Arc::clone(&requests);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                counter.fetch_add(1, Ordering::SeqCst);
                let _ = handle_connection(stream, &responder);
            }
        });
        MockServer { addr, requests }
    }

    pub fn url(&self) -> &str {
        &self.addr
    }

    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }
}

fn handle_connection<F>(mut stream: TcpStream, responder: &F) -> std::io::Result<()>
where
    F: Fn(&WireRequest) -> WireResponse,
{
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some(value) = line
            .to_ascii_lowercase()
            .strip_prefix("content-length:")
            .map(str::trim)
            .and_then(|v| v.parse::<usize>().ok())
        {
            content_length = value;
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;

    let response = if !request_line.starts_with("POST /v1/logprobs") {
        WireResponse {
            status: 404,
            body: "{\"error\":\"not found\"}".into(),
        }
    } else {
        match serde_json::from_slice::<WireRequest>(&body) {
            Ok(req) => responder(&req),
            Err(e) => WireResponse {
                status: 400,
                body: format!("{{\"error\":\"{e}\"}}"),
            },
        }
    };

    let reason = match response.status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        500 => "Internal Server Error",
        _ => "Status",
    };
    write!(
        stream,
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.status,
        reason,
        response.body.len(),
        response.body
    )?;
    stream.flush()
}
