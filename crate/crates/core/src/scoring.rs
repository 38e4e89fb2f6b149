//! Candidate scores and the six selection methods.
//!
//! Every selector is a pure function from a candidate list to a
//! [`Selection`]. All probability arithmetic stays in log space; the only
//! place probabilities are materialized is the MaxDiff score, which uses a
//! stable sign/magnitude decomposition so that answer-length log-probs (far
//! below the double-precision underflow threshold in probability space)
//! still order correctly.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("candidate list is empty")]
    EmptyCandidateList,
    #[error("k must be >= 2, got {0}")]
    InvalidK(u32),
    #[error("invalid candidate: {0}")]
    InvalidCandidate(String),
    #[error("unknown method name: {0}")]
    UnknownMethod(String),
}

/// One answer option with its posterior and prior log-probabilities (nats).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    index: usize,
    text: String,
    logp_post: f64,
    logp_prior: f64,
    token_count: usize,
}

impl ScoredCandidate {
    pub fn new(
        index: usize,
        text: impl Into<String>,
        logp_post: f64,
        logp_prior: f64,
        token_count: usize,
    ) -> Result<Self, ScoringError> {
        if !logp_post.is_finite() || logp_post > 0.0 {
            return Err(ScoringError::InvalidCandidate(format!(
                "logp_post must be finite and <= 0, got {logp_post}"
            )));
        }
        if !logp_prior.is_finite() || logp_prior > 0.0 {
            return Err(ScoringError::InvalidCandidate(format!(
                "logp_prior must be finite and <= 0, got {logp_prior}"
            )));
        }
        if token_count == 0 {
            return Err(ScoringError::InvalidCandidate(
                "token_count must be >= 1".into(),
            ));
        }
        Ok(Self {
            index,
            text: text.into(),
            logp_post,
            logp_prior,
            token_count,
        })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn logp_post(&self) -> f64 {
        self.logp_post
    }

    pub fn logp_prior(&self) -> f64 {
        self.logp_prior
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }
}

/// Log-space score of how much more likely the candidate is given the full
/// context than under its reduced-context prior. Zero means the context adds
/// nothing; positive means the context makes the candidate more likely.
pub fn tau(c: &ScoredCandidate) -> f64 {
    c.logp_post - c.logp_prior
}

/// Identifier of a selection method. `k` is the shortlist size of the
/// two-stage methods (default 2). Serializes as the flag-style name, e.g.
/// `"max_ratio"` or `"top_k_min_prior:k=3"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MethodId {
    MaxPost,
    MaxPostN,
    MaxRatio,
    MaxDiff,
    TopKMinPrior { k: u32 },
    TopKMaxPrior { k: u32 },
}

pub const DEFAULT_TOP_K: u32 = 2;

impl MethodId {
    pub fn top_k_min_prior(k: u32) -> Result<Self, ScoringError> {
        if k < 2 {
            return Err(ScoringError::InvalidK(k));
        }
        Ok(Self::TopKMinPrior { k })
    }

    pub fn top_k_max_prior(k: u32) -> Result<Self, ScoringError> {
        if k < 2 {
            return Err(ScoringError::InvalidK(k));
        }
        Ok(Self::TopKMaxPrior { k })
    }

    /// All six methods with default parameters, in report order.
    pub fn all_default() -> Vec<Self> {
        vec![
            Self::MaxPost,
            Self::MaxRatio,
            Self::MaxDiff,
            Self::MaxPostN,
            Self::TopKMinPrior { k: DEFAULT_TOP_K },
            Self::TopKMaxPrior { k: DEFAULT_TOP_K },
        ]
    }

    /// Canonical flag-style name, e.g. `max_ratio` or `top_k_min_prior:k=3`.
    pub fn flag_name(&self) -> String {
        match self {
            Self::MaxPost => "max_post".into(),
            Self::MaxPostN => "max_post_n".into(),
            Self::MaxRatio => "max_ratio".into(),
            Self::MaxDiff => "max_diff".into(),
            Self::TopKMinPrior { k } => format!("top_k_min_prior:k={k}"),
            Self::TopKMaxPrior { k } => format!("top_k_max_prior:k={k}"),
        }
    }

    /// Short table label, e.g. `MaxRatio` or `Top2MinPr`.
    pub fn label(&self) -> String {
        match self {
            Self::MaxPost => "MaxPost".into(),
            Self::MaxPostN => "MaxPostN".into(),
            Self::MaxRatio => "MaxRatio".into(),
            Self::MaxDiff => "MaxDiff".into(),
            Self::TopKMinPrior { k } => format!("Top{k}MinPr"),
            Self::TopKMaxPrior { k } => format!("Top{k}MaxPr"),
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.flag_name())
    }
}

impl Serialize for MethodId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.flag_name())
    }
}

impl<'de> Deserialize<'de> for MethodId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for MethodId {
    type Err = ScoringError;

    /// Accepts the flag-style names; the two-stage methods take an optional
    /// `:k=N` suffix.
    fn from_str(s: &str) -> Result<Self, ScoringError> {
        let (base, k) = match s.split_once(":k=") {
            Some((base, k_str)) => {
                let k: u32 = k_str
                    .parse()
                    .map_err(|_| ScoringError::UnknownMethod(s.to_string()))?;
                (base, Some(k))
            }
            None => (s, None),
        };
        match (base, k) {
            ("max_post", None) => Ok(Self::MaxPost),
            ("max_post_n", None) => Ok(Self::MaxPostN),
            ("max_ratio", None) => Ok(Self::MaxRatio),
            ("max_diff", None) => Ok(Self::MaxDiff),
            ("top_k_min_prior", k) => Self::top_k_min_prior(k.unwrap_or(DEFAULT_TOP_K)),
            ("top_k_max_prior", k) => Self::top_k_max_prior(k.unwrap_or(DEFAULT_TOP_K)),
            _ => Err(ScoringError::UnknownMethod(s.to_string())),
        }
    }
}

/// Outcome of applying one method to a candidate list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub method: MethodId,
    pub chosen_index: usize,
    pub per_candidate_score: Vec<f64>,
}

/// Dispatches to the selector for `method`.
pub fn select(method: MethodId, cands: &[ScoredCandidate]) -> Result<Selection, ScoringError> {
    match method {
        MethodId::MaxPost => sel_max_post(cands),
        MethodId::MaxPostN => sel_max_post_n(cands),
        MethodId::MaxRatio => sel_max_ratio(cands),
        MethodId::MaxDiff => sel_max_diff(cands),
        MethodId::TopKMinPrior { k } => sel_top_k_min_prior(cands, k),
        MethodId::TopKMaxPrior { k } => sel_top_k_max_prior(cands, k),
    }
}

fn argmax_lowest_index(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn simple_argmax(
    method: MethodId,
    cands: &[ScoredCandidate],
    score: impl Fn(&ScoredCandidate) -> f64,
) -> Result<Selection, ScoringError> {
    if cands.is_empty() {
        return Err(ScoringError::EmptyCandidateList);
    }
    let per_candidate_score: Vec<f64> = cands.iter().map(score).collect();
    Ok(Selection {
        method,
        chosen_index: argmax_lowest_index(&per_candidate_score),
        per_candidate_score,
    })
}

/// Highest posterior log-probability.
pub fn sel_max_post(cands: &[ScoredCandidate]) -> Result<Selection, ScoringError> {
    simple_argmax(MethodId::MaxPost, cands, |c| c.logp_post)
}

/// Posterior log-probability normalized by the candidate's token count.
pub fn sel_max_post_n(cands: &[ScoredCandidate]) -> Result<Selection, ScoringError> {
    simple_argmax(MethodId::MaxPostN, cands, |c| {
        c.logp_post / c.token_count as f64
    })
}

/// Highest posterior-to-prior ratio, i.e. argmax of [`tau`].
pub fn sel_max_ratio(cands: &[ScoredCandidate]) -> Result<Selection, ScoringError> {
    simple_argmax(MethodId::MaxRatio, cands, tau)
}

/// Sign of `exp(logp_post) - exp(logp_prior)` plus the log of its absolute
/// value. Comparing these pairs orders the true differences exactly even
/// when both probabilities underflow `f64`.
fn diff_sign_logmag(lp_post: f64, lp_prior: f64) -> (i8, f64) {
    match lp_post.partial_cmp(&lp_prior).expect("logprobs are never NaN") {
        Ordering::Equal => (0, f64::NEG_INFINITY),
        Ordering::Greater => (1, lp_post + log1mexp(lp_post - lp_prior)),
        Ordering::Less => (-1, lp_prior + log1mexp(lp_prior - lp_post)),
    }
}

/// `ln(1 - exp(-d))` for `d > 0`, split at `ln 2` for accuracy.
fn log1mexp(d: f64) -> f64 {
    if d <= std::f64::consts::LN_2 {
        (-(-d).exp_m1()).ln()
    } else {
        (-(-d).exp()).ln_1p()
    }
}

fn cmp_diff(a: (i8, f64), b: (i8, f64)) -> Ordering {
    match a.0.cmp(&b.0) {
        Ordering::Equal => {}
        other => return other,
    }
    match a.0 {
        1 => a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal),
        -1 => b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal),
        _ => Ordering::Equal,
    }
}

/// Highest probability difference `P(r|q) - P(r|prior)`.
///
/// The reported per-candidate score is the difference itself, computed as
/// `sign * exp(max) * (1 - exp(-|logp_post - logp_prior|))`; the argmax is
/// taken over the sign/log-magnitude pairs so ordering survives underflow.
pub fn sel_max_diff(cands: &[ScoredCandidate]) -> Result<Selection, ScoringError> {
    if cands.is_empty() {
        return Err(ScoringError::EmptyCandidateList);
    }
    let keys: Vec<(i8, f64)> = cands
        .iter()
        .map(|c| diff_sign_logmag(c.logp_post, c.logp_prior))
        .collect();
    let per_candidate_score: Vec<f64> = cands
        .iter()
        .zip(&keys)
        .map(|(c, &(sign, _))| {
            let hi = c.logp_post.max(c.logp_prior);
            let gap = (c.logp_post - c.logp_prior).abs();
            sign as f64 * hi.exp() * -(-gap).exp_m1()
        })
        .collect();
    let mut best = 0;
    for i in 1..keys.len() {
        if cmp_diff(keys[i], keys[best]) == Ordering::Greater {
            best = i;
        }
    }
    Ok(Selection {
        method: MethodId::MaxDiff,
        chosen_index: best,
        per_candidate_score,
    })
}

/// Indices of the `k` candidates with the highest posterior (ties to the
/// lowest index), in (posterior desc, index asc) order.
fn shortlist_by_post(cands: &[ScoredCandidate], k: u32) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        cands[b]
            .logp_post
            .partial_cmp(&cands[a].logp_post)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k as usize);
    order
}

fn top_k_select(
    method: MethodId,
    cands: &[ScoredCandidate],
    k: u32,
    want_max_prior: bool,
) -> Result<Selection, ScoringError> {
    if cands.is_empty() {
        return Err(ScoringError::EmptyCandidateList);
    }
    if k < 2 {
        return Err(ScoringError::InvalidK(k));
    }
    let shortlist = shortlist_by_post(cands, k);
    let mut chosen = shortlist[0];
    for &i in &shortlist[1..] {
        let better = if want_max_prior {
            cands[i].logp_prior > cands[chosen].logp_prior
        } else {
            cands[i].logp_prior < cands[chosen].logp_prior
        };
        if better || (cands[i].logp_prior == cands[chosen].logp_prior && i < chosen) {
            chosen = i;
        }
    }
    // The quantity argmaxed: the (possibly negated) prior inside the
    // shortlist, -inf outside it.
    let per_candidate_score: Vec<f64> = (0..cands.len())
        .map(|i| {
            if shortlist.contains(&i) {
                if want_max_prior {
                    cands[i].logp_prior
                } else {
                    -cands[i].logp_prior
                }
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    Ok(Selection {
        method,
        chosen_index: chosen,
        per_candidate_score,
    })
}

/// Shortlists the `k` highest-posterior candidates, then picks the one with
/// the smallest prior.
pub fn sel_top_k_min_prior(cands: &[ScoredCandidate], k: u32) -> Result<Selection, ScoringError> {
    top_k_select(MethodId::TopKMinPrior { k }, cands, k, false)
}

/// Shortlists the `k` highest-posterior candidates, then picks the one with
/// the largest prior.
pub fn sel_top_k_max_prior(cands: &[ScoredCandidate], k: u32) -> Result<Selection, ScoringError> {
    top_k_select(MethodId::TopKMaxPrior { k }, cands, k, true)
}
