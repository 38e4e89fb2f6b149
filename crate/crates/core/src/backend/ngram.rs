//! Deterministic add-k smoothed n-gram model over lowercased
//! whitespace-delimited tokens.
//!
//! The model counts every context length from 0 up to `order - 1` during a
//! single training pass, so a continuation can be scored from any starting
//! context, including the empty one, and the probability chain rule holds
//! exactly for arbitrary splits.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{join_context, tokenize_with_offsets, Backend, BackendError, ContinuationScore};

/// Reserved token that out-of-vocabulary words map to.
pub const UNKNOWN_TOKEN: &str = "<unk>";
/// Reserved end-of-text token. Never observed in counts, but part of the
/// vocabulary the smoothed distribution normalizes over.
pub const END_OF_TEXT_TOKEN: &str = "<eot>";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct ContextCounts {
    total: u64,
    by_token: BTreeMap<String, u64>,
}

/// Add-k smoothed n-gram language model.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    smoothing_k: f64,
    vocabulary: BTreeSet<String>,
    counts: BTreeMap<Vec<String>, ContextCounts>,
}

impl NGramModel {
    /// Trains a model on a corpus. Tokens are lowercased and split on
    /// whitespace; the vocabulary is the observed tokens plus the two
    /// reserved tokens.
    pub fn train(corpus: &str, order: usize, smoothing_k: f64) -> Result<Self, BackendError> {
        if order < 1 {
            return Err(BackendError::InvalidParam("order must be >= 1".into()));
        }
        if !smoothing_k.is_finite() || smoothing_k <= 0.0 {
            return Err(BackendError::InvalidParam("smoothing_k must be > 0".into()));
        }
        let tokens: Vec<String> = tokenize_with_offsets(corpus)
            .into_iter()
            .map(|(_, t)| t)
            .collect();
        if tokens.is_empty() {
            return Err(BackendError::EmptyCorpus);
        }

        let mut vocabulary: BTreeSet<String> = tokens.iter().cloned().collect();
        vocabulary.insert(UNKNOWN_TOKEN.to_string());
        vocabulary.insert(END_OF_TEXT_TOKEN.to_string());

        let mut counts: BTreeMap<Vec<String>, ContextCounts> = BTreeMap::new();
        for i in 0..tokens.len() {
            let max_len = (order - 1).min(i);
            for len in 0..=max_len {
                let context = tokens[i - len..i].to_vec();
                let entry = counts.entry(context).or_default();
                entry.total += 1;
                *entry.by_token.entry(tokens[i].clone()).or_insert(0) += 1;
            }
        }

        Ok(Self {
            order,
            smoothing_k,
            vocabulary,
            counts,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing_k(&self) -> f64 {
        self.smoothing_k
    }

    pub fn vocabulary(&self) -> &BTreeSet<String> {
        &self.vocabulary
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    /// Maps a raw token to itself if in vocabulary, otherwise to the unknown
    /// token.
    pub fn map_token<'a>(&self, raw: &'a str) -> &'a str {
        if self.vocabulary.contains(raw) {
            raw
        } else {
            UNKNOWN_TOKEN
        }
    }

    /// Smoothed log-probability (nats) of `token` following `context_tokens`.
    /// Both must already be mapped into the vocabulary. Only the last
    /// `order - 1` context tokens are consulted.
    pub fn token_logprob(&self, context_tokens: &[String], token: &str) -> f64 {
        let window_len = (self.order - 1).min(context_tokens.len());
        let window = &context_tokens[context_tokens.len() - window_len..];
        let (count, total) = match self.counts.get(window) {
            Some(ctx) => (ctx.by_token.get(token).copied().unwrap_or(0), ctx.total),
            None => (0, 0),
        };
        let v = self.vocab_size() as f64;
        ((count as f64 + self.smoothing_k) / (total as f64 + self.smoothing_k * v)).ln()
    }

    /// Deterministic JSON form: identical corpus and parameters serialize to
    /// identical bytes.
    pub fn to_json(&self) -> String {
        let file: NGramModelFile = self.into();
        serde_json::to_string(&file).expect("model serialization cannot fail")
    }

    pub fn from_json(json: &str) -> Result<Self, BackendError> {
        let file: NGramModelFile = serde_json::from_str(json)
            .map_err(|e| BackendError::InvalidParam(format!("bad model json: {e}")))?;
        file.try_into()
    }
}

#[derive(Serialize, Deserialize)]
struct CountEntry {
    context: Vec<String>,
    token: String,
    count: u64,
}

#[derive(Serialize, Deserialize)]
struct NGramModelFile {
    order: usize,
    smoothing_k: f64,
    vocabulary: Vec<String>,
    counts: Vec<CountEntry>,
}

impl From<&NGramModel> for NGramModelFile {
    fn from(model: &NGramModel) -> Self {
        let mut counts = Vec::new();
        for (context, ctx_counts) in &model.counts {
            for (token, count) in &ctx_counts.by_token {
                counts.push(CountEntry {
                    context: context.clone(),
                    token: token.clone(),
                    count: *count,
                });
            }
        }
        Self {
            order: model.order,
            smoothing_k: model.smoothing_k,
            vocabulary: model.vocabulary.iter().cloned().collect(),
            counts,
        }
    }
}

impl TryFrom<NGramModelFile> for NGramModel {
    type Error = BackendError;

    fn try_from(file: NGramModelFile) -> Result<Self, BackendError> {
        if file.order < 1 {
            return Err(BackendError::InvalidParam("order must be >= 1".into()));
        }
        if !file.smoothing_k.is_finite() || file.smoothing_k <= 0.0 {
            return Err(BackendError::InvalidParam("smoothing_k must be > 0".into()));
        }
        let mut counts: BTreeMap<Vec<String>, ContextCounts> = BTreeMap::new();
        for entry in file.counts {
            let ctx = counts.entry(entry.context).or_default();
            ctx.total += entry.count;
            *ctx.by_token.entry(entry.token).or_insert(0) += entry.count;
        }
        Ok(Self {
            order: file.order,
            smoothing_k: file.smoothing_k,
            vocabulary: file.vocabulary.into_iter().collect(),
            counts,
        })
    }
}

/// [`Backend`] over an [`NGramModel`].
pub struct NgramBackend {
    model: NGramModel,
    model_id: String,
}

impl NgramBackend {
    pub fn new(model: NGramModel) -> Self {
        let model_id = format!("ngram-{}", model.order());
        Self { model, model_id }
    }

    pub fn train(corpus: &str, order: usize, smoothing_k: f64) -> Result<Self, BackendError> {
        Ok(Self::new(NGramModel::train(corpus, order, smoothing_k)?))
    }

    pub fn model(&self) -> &NGramModel {
        &self.model
    }
}

impl Backend for NgramBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score_continuation(
        &self,
        context: &str,
        continuation: &str,
    ) -> Result<ContinuationScore, BackendError> {
        let (full, boundary) = join_context(context, continuation);
        let mut history: Vec<String> = Vec::new();
        let mut token_strings = Vec::new();
        let mut token_logprobs = Vec::new();
        for (start, token) in tokenize_with_offsets(&full) {
            let mapped = self.model.map_token(&token).to_string();
            if start >= boundary {
                token_logprobs.push(self.model.token_logprob(&history, &mapped));
                token_strings.push(token);
            }
            history.push(mapped);
        }
        ContinuationScore::from_tokens(token_strings, token_logprobs)
    }
}
