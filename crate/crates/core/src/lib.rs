//! Selects the answer a language model finds *surprisingly likely*: the
//! candidate whose probability conditioned on the question exceeds its
//! probability under a reduced prior context by the largest ratio.
//!
//! The crate provides:
//! - [`backend`]: conditional log-probability scoring via an embedded
//!   deterministic n-gram model or a remote log-probability service, with a
//!   persistent checksummed cache;
//! - [`scoring`]: the posterior/prior score and six selection methods;
//! - [`benchmarks`]: loaders for question-answering benchmark files into a
//!   unified multiple-choice item model;
//! - [`harness`]: the evaluation loop with deterministic accuracy reports;
//! - [`pts`]: the peer-prediction reward this selection rule descends from.

pub mod backend;
pub mod benchmarks;
pub mod harness;
pub mod pts;
pub mod scoring;

pub use backend::{
    Backend, BackendConfig, BackendError, BackendKind, ContinuationScore, NGramModel,
    NgramBackend, RemoteBackend, ScoreCache,
};
pub use benchmarks::{DataError, DatasetStats, LoadedDataset, MCItem, SplitTag, TaskKind};
pub use harness::{EvalReport, HarnessError, InstanceRecord, PriorMode, RunConfig};
pub use pts::{pts_expected_reward, pts_frequency, pts_reward, PtsContext, PtsError};
pub use scoring::{tau, MethodId, ScoredCandidate, ScoringError, Selection};
