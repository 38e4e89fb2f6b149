//! C ABI over the scoring library: opaque model handles, status codes, and
//! flat-array selector entry points. The header is generated into
//! `include/serum.h` at build time.

use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use serum_core::backend::{Backend, BackendError, NgramBackend};
use serum_core::scoring::{select, MethodId, ScoredCandidate, ScoringError};

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SerumStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidParam = 3,
    EmptyCorpus = 4,
    EmptyContinuation = 5,
    EmptyCandidates = 6,
    InvalidK = 7,
    UnknownMethod = 8,
    InvalidCandidate = 9,
    Internal = 10,
}

impl From<&BackendError> for SerumStatus {
    fn from(err: &BackendError) -> Self {
        match err {
            BackendError::EmptyContinuation => SerumStatus::EmptyContinuation,
            BackendError::EmptyCorpus => SerumStatus::EmptyCorpus,
            BackendError::InvalidParam(_) => SerumStatus::InvalidParam,
            _ => SerumStatus::Internal,
        }
    }
}

impl From<&ScoringError> for SerumStatus {
    fn from(err: &ScoringError) -> Self {
        match err {
            ScoringError::EmptyCandidateList => SerumStatus::EmptyCandidates,
            ScoringError::InvalidK(_) => SerumStatus::InvalidK,
            ScoringError::UnknownMethod(_) => SerumStatus::UnknownMethod,
            ScoringError::InvalidCandidate(_) => SerumStatus::InvalidCandidate,
        }
    }
}

/// Opaque handle to a trained n-gram scoring model.
pub struct SerumNgram {
    backend: NgramBackend,
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Result<&'a str, SerumStatus> {
    if ptr.is_null() {
        return Err(SerumStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| SerumStatus::InvalidUtf8)
}

fn guarded(f: impl FnOnce() -> SerumStatus) -> SerumStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(SerumStatus::Internal)
}

/// Trains an n-gram model on a whitespace-tokenized corpus and stores the
/// handle in `out`. Free it with `serum_ngram_free`.
///
/// # Safety
/// `corpus` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn serum_ngram_train(
    corpus: *const c_char,
    order: usize,
    smoothing_k: f64,
    out: *mut *mut SerumNgram,
) -> SerumStatus {
    guarded(|| {
        if out.is_null() {
            return SerumStatus::NullArgument;
        }
        let corpus = match cstr(corpus) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match NgramBackend::train(corpus, order, smoothing_k) {
            Ok(backend) => {
                *out = Box::into_raw(Box::new(SerumNgram { backend }));
                SerumStatus::Ok
            }
            Err(err) => SerumStatus::from(&err),
        }
    })
}

/// Releases a model handle. Passing NULL is a no-op.
///
/// # Safety
/// `model` must be NULL or a pointer returned by `serum_ngram_train` that
/// has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn serum_ngram_free(model: *mut SerumNgram) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Scores a continuation given a context. On success writes the total
/// log-probability (nats) and the continuation token count.
///
/// # Safety
/// `model` must be a live handle; strings must be valid NUL-terminated
/// UTF-8; output pointers may be NULL if the value is not wanted.
#[no_mangle]
pub unsafe extern "C" fn serum_ngram_score(
    model: *const SerumNgram,
    context: *const c_char,
    continuation: *const c_char,
    total_logprob: *mut f64,
    token_count: *mut usize,
) -> SerumStatus {
    guarded(|| {
        if model.is_null() {
            return SerumStatus::NullArgument;
        }
        let (context, continuation) = match (cstr(context), cstr(continuation)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(status), _) | (_, Err(status)) => return status,
        };
        match (*model).backend.score_continuation(context, continuation) {
            Ok(score) => {
                if !total_logprob.is_null() {
                    *total_logprob = score.total_logprob;
                }
                if !token_count.is_null() {
                    *token_count = score.token_count;
                }
                SerumStatus::Ok
            }
            Err(err) => SerumStatus::from(&err),
        }
    })
}

/// Log-space posterior/prior score of a single candidate:
/// `logp_post - logp_prior`.
#[no_mangle]
pub extern "C" fn serum_tau(logp_post: f64, logp_prior: f64) -> f64 {
    logp_post - logp_prior
}

/// Applies a selection method to parallel arrays of candidate scores and
/// writes the chosen candidate index.
///
/// `method` is the flag-style name (e.g. "max_ratio", "top_k_min_prior:k=3").
/// `token_counts` may be NULL, in which case every candidate counts one
/// token (only the length-normalized method reads it).
///
/// # Safety
/// `logp_post` and `logp_prior` must point to `n` doubles; `token_counts`
/// must be NULL or point to `n` entries; `chosen_index` must be valid.
#[no_mangle]
pub unsafe extern "C" fn serum_select(
    method: *const c_char,
    logp_post: *const f64,
    logp_prior: *const f64,
    token_counts: *const usize,
    n: usize,
    chosen_index: *mut usize,
) -> SerumStatus {
    guarded(|| {
        if logp_post.is_null() || logp_prior.is_null() || chosen_index.is_null() {
            return SerumStatus::NullArgument;
        }
        let method_name = match cstr(method) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let method: MethodId = match method_name.parse() {
            Ok(m) => m,
            Err(err) => return SerumStatus::from(&err),
        };
        if n == 0 {
            return SerumStatus::EmptyCandidates;
        }
        let posts = std::slice::from_raw_parts(logp_post, n);
        let priors = std::slice::from_raw_parts(logp_prior, n);
        let counts: Vec<usize> = if token_counts.is_null() {
            vec![1; n]
        } else {
            std::slice::from_raw_parts(token_counts, n).to_vec()
        };
        let mut cands = Vec::with_capacity(n);
        for i in 0..n {
            match ScoredCandidate::new(i, i.to_string(), posts[i], priors[i], counts[i]) {
                Ok(c) => cands.push(c),
                Err(err) => return SerumStatus::from(&err),
            }
        }
        match select(method, &cands) {
            Ok(selection) => {
                *chosen_index = selection.chosen_index;
                SerumStatus::Ok
            }
            Err(err) => SerumStatus::from(&err),
        }
    })
}

/// Expected peer-prediction reward of reporting `candidate`: the peer
/// probability of the label divided by its empirical frequency among
/// `counts`.
///
/// # Safety
/// `peer_probs` and `counts` must point to `n` entries; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn serum_pts_expected_reward(
    peer_probs: *const f64,
    counts: *const u64,
    n: usize,
    candidate: usize,
    out: *mut f64,
) -> SerumStatus {
    guarded(|| {
        if peer_probs.is_null() || counts.is_null() || out.is_null() {
            return SerumStatus::NullArgument;
        }
        if n == 0 || candidate >= n {
            return SerumStatus::InvalidParam;
        }
        let probs = std::slice::from_raw_parts(peer_probs, n);
        let counts = std::slice::from_raw_parts(counts, n);
        let labels: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let count_map = labels.iter().cloned().zip(counts.iter().copied()).collect();
        let dist = labels
            .iter()
            .cloned()
            .zip(probs.iter().copied())
            .collect::<std::collections::BTreeMap<_, _>>();
        let ctx = match serum_core::pts::PtsContext::new(
            labels.clone(),
            count_map,
            labels[candidate].clone(),
            labels[candidate].clone(),
        ) {
            Ok(ctx) => ctx,
            Err(_) => return SerumStatus::InvalidParam,
        };
        match serum_core::pts::pts_expected_reward(&ctx, &dist, &labels[candidate]) {
            Ok(reward) => {
                *out = reward;
                SerumStatus::Ok
            }
            Err(_) => SerumStatus::InvalidParam,
        }
    })
}

/// Library version as a newly allocated C string; free with
/// `serum_string_free`.
#[no_mangle]
pub extern "C" fn serum_version() -> *mut c_char {
    CString::new(env!("CARGO_PKG_VERSION"))
        .map_or(std::ptr::null_mut(), CString::into_raw)
}

/// Frees a string allocated by this library. Passing NULL is a no-op.
///
/// # Safety
/// `s` must be NULL or a pointer returned by `serum_version` that has not
/// been freed yet.
#[no_mangle]
pub unsafe extern "C" fn serum_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
