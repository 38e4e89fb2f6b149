//! Evaluation harness: scores every candidate of every item under a
//! backend, applies the selection methods, and produces deterministic
//! accuracy reports.
//!
//! Scoring is two-phase: the unique (context, continuation) pairs are
//! collected in dataset order, scored (in parallel up to the configured
//! limit), and only then are items assembled and aggregated sequentially.
//! Every pair is therefore scored at most once per run and the report bytes
//! do not depend on the parallelism level.

pub mod report;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendConfig, BackendError, BackendKind, NgramBackend, RemoteBackend};
use crate::benchmarks::{self, DataError, MCItem, SplitTag, TaskKind};
use crate::scoring::{select, tau, MethodId, ScoredCandidate, ScoringError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("item {item_id}: {message}")]
    ItemFailed {
        item_id: String,
        message: String,
        /// Instance records of the items that completed before the abort,
        /// in dataset order, so callers can flush them.
        partial: Vec<InstanceRecord>,
    },
    #[error("no item carries a category")]
    NoCategories,
    #[error("no item carries a split tag")]
    NoSplitTags,
    #[error("method not present in report: {0}")]
    UnknownMethod(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// How the reduced prior context is chosen for question-style items.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// Use each item's own prior context (the question mark for
    /// question-style tasks, the connective / final punctuation otherwise).
    #[default]
    Item,
    /// Empty-string prior.
    Empty,
    /// Average the prior in probability space over several reduced contexts.
    Multi(Vec<String>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: TaskKind,
    pub path: PathBuf,
}

/// Full configuration of an evaluation run. The JSON config file mirrors
/// these field names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub datasets: Vec<DatasetSpec>,
    #[serde(default = "BackendConfig::ngram")]
    pub backend: BackendConfig,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub corpus_path: Option<PathBuf>,
    #[serde(default = "default_ngram_order")]
    pub ngram_order: usize,
    #[serde(default = "default_ngram_k")]
    pub ngram_k: f64,
    #[serde(default)]
    pub methods: Vec<MethodId>,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub prior_mode: PriorMode,
    #[serde(default)]
    pub skip_errors: bool,
    /// Reserved; no deterministic code path consumes it.
    #[serde(default)]
    pub seed: u64,
}

fn default_model() -> String {
    "default".into()
}

fn default_ngram_order() -> usize {
    3
}

fn default_ngram_k() -> f64 {
    0.01
}

fn default_jobs() -> usize {
    1
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("serum-out")
}

impl Default for RunConfig {
    /// The same defaults serde applies to missing config-file fields.
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config is valid")
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.datasets.is_empty() {
            return Err(HarnessError::InvalidConfig("at least one dataset".into()));
        }
        if self.methods.is_empty() {
            return Err(HarnessError::InvalidConfig("at least one method".into()));
        }
        if self.jobs == 0 {
            return Err(HarnessError::InvalidConfig("jobs must be >= 1".into()));
        }
        if let PriorMode::Multi(ctxs) = &self.prior_mode {
            if ctxs.is_empty() {
                return Err(HarnessError::InvalidConfig(
                    "multi prior needs at least one context".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One line of the instance-level dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub item_id: String,
    pub method: MethodId,
    pub chosen_index: usize,
    pub chosen_text: String,
    pub correct: bool,
    pub logp_post: f64,
    pub logp_prior: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAccuracy {
    pub method: MethodId,
    pub correct_count: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryBreakdown {
    pub category: String,
    pub item_count: usize,
    pub per_method: Vec<MethodAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitBreakdown {
    pub split: SplitTag,
    pub item_count: usize,
    pub per_method: Vec<MethodAccuracy>,
}

/// Counts of an ordered method pair over the answered items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub both_correct: usize,
    pub a_only: usize,
    pub b_only: usize,
    pub neither: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionCell {
    pub method_a: MethodId,
    pub method_b: MethodId,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedItem {
    pub item_id: String,
    pub error: String,
}

/// Deterministic evaluation report. Serialized as-is to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub tasks: Vec<TaskKind>,
    pub methods: Vec<MethodId>,
    /// Number of answered items (skipped items are excluded everywhere).
    pub item_count: usize,
    pub aggregate: Vec<MethodAccuracy>,
    pub by_split: Vec<SplitBreakdown>,
    pub by_category: Vec<CategoryBreakdown>,
    pub confusion: Vec<ConfusionCell>,
    pub skipped: Vec<SkippedItem>,
    pub instances: Vec<InstanceRecord>,
}

impl EvalReport {
    /// Per-category accuracy table; errors when no item carried a category.
    pub fn breakdown_by_category(&self) -> Result<&[CategoryBreakdown], HarnessError> {
        if self.by_category.is_empty() {
            return Err(HarnessError::NoCategories);
        }
        Ok(&self.by_category)
    }

    /// Per-split accuracy table; errors when no item carried a split tag.
    pub fn breakdown_by_split(&self) -> Result<&[SplitBreakdown], HarnessError> {
        if self.by_split.is_empty() {
            return Err(HarnessError::NoSplitTags);
        }
        Ok(&self.by_split)
    }

    /// Exact partition of the answered items by the correctness of two
    /// methods. Works for any pair present in the report, including a == b.
    pub fn method_confusion(
        &self,
        a: MethodId,
        b: MethodId,
    ) -> Result<ConfusionCounts, HarnessError> {
        for m in [a, b] {
            if !self.methods.contains(&m) {
                return Err(HarnessError::UnknownMethod(m.flag_name()));
            }
        }
        let mut by_item: BTreeMap<&str, (Option<bool>, Option<bool>)> = BTreeMap::new();
        for inst in &self.instances {
            let entry = by_item.entry(&inst.item_id).or_default();
            if inst.method == a {
                entry.0 = Some(inst.correct);
            }
            if inst.method == b {
                entry.1 = Some(inst.correct);
            }
        }
        let mut counts = ConfusionCounts {
            both_correct: 0,
            a_only: 0,
            b_only: 0,
            neither: 0,
        };
        for (_, (ca, cb)) in by_item {
            match (ca.unwrap_or(false), cb.unwrap_or(false)) {
                (true, true) => counts.both_correct += 1,
                (true, false) => counts.a_only += 1,
                (false, true) => counts.b_only += 1,
                (false, false) => counts.neither += 1,
            }
        }
        Ok(counts)
    }
}

/// `ln` of the arithmetic mean of `exp(values)`, computed stably.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln() - (values.len() as f64).ln()
}

fn prior_contexts_for(item: &MCItem, mode: &PriorMode) -> Vec<String> {
    if item.task_kind != TaskKind::TruthfulQa {
        return vec![item.prior_context.clone()];
    }
    match mode {
        PriorMode::Item => vec![item.prior_context.clone()],
        PriorMode::Empty => vec![String::new()],
        PriorMode::Multi(ctxs) => ctxs.clone(),
    }
}

type Pair = (String, String);

/// Scores all items under the backend and assembles the report.
///
/// On the default failure policy, the error carries the instance records of
/// the items that did complete so the caller can flush them before aborting.
pub fn evaluate_items(
    items: &[MCItem],
    backend: &dyn Backend,
    methods: &[MethodId],
    jobs: usize,
    prior_mode: &PriorMode,
    skip_errors: bool,
) -> Result<EvalReport, HarnessError> {
    if methods.is_empty() {
        return Err(HarnessError::InvalidConfig("at least one method".into()));
    }

    // Phase 1: unique scoring pairs in dataset order.
    let mut pairs: Vec<Pair> = Vec::new();
    let mut seen: HashSet<Pair> = HashSet::new();
    for item in items {
        for cand in &item.candidates {
            let pair = (item.prompt.clone(), cand.clone());
            if seen.insert(pair.clone()) {
                pairs.push(pair);
            }
            for prior_ctx in prior_contexts_for(item, prior_mode) {
                let pair = (prior_ctx, cand.clone());
                if seen.insert(pair.clone()) {
                    pairs.push(pair);
                }
            }
        }
    }

    // Phase 2: score each pair exactly once, in parallel up to `jobs`.
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::InvalidConfig(format!("thread pool: {e}")))?;
    let scored: Vec<Result<crate::backend::ContinuationScore, String>> = pool.install(|| {
        pairs
            .par_iter()
            .map(|(ctx, cont)| {
                backend
                    .score_continuation(ctx, cont)
                    .map_err(|e| e.to_string())
            })
            .collect()
    });
    let score_of: HashMap<&Pair, &Result<crate::backend::ContinuationScore, String>> =
        pairs.iter().zip(scored.iter()).collect();

    // Phase 3: sequential assembly in dataset order.
    let mut answered: Vec<(usize, Vec<InstanceRecord>)> = Vec::new();
    let mut skipped: Vec<SkippedItem> = Vec::new();
    let mut correctness: Vec<Vec<bool>> = Vec::new(); // [answered item][method]
    for (item_idx, item) in items.iter().enumerate() {
        match assemble_item(item, methods, prior_mode, &score_of) {
            Ok(records) => {
                correctness.push(records.iter().map(|r| r.correct).collect());
                answered.push((item_idx, records));
            }
            Err(message) => {
                if skip_errors {
                    skipped.push(SkippedItem {
                        item_id: item.id.clone(),
                        error: message,
                    });
                } else {
                    let partial = answered
                        .into_iter()
                        .flat_map(|(_, records)| records)
                        .collect();
                    return Err(HarnessError::ItemFailed {
                        item_id: item.id.clone(),
                        message,
                        partial,
                    });
                }
            }
        }
    }

    // Aggregation.
    let answered_items: Vec<&MCItem> = answered.iter().map(|(i, _)| &items[*i]).collect();
    let aggregate = accuracy_rows(methods, &correctness, |_| true);

    let mut by_split = Vec::new();
    for split in [SplitTag::Filtered, SplitTag::Unfiltered] {
        let member: Vec<bool> = answered_items
            .iter()
            .map(|it| it.split_tag == Some(split))
            .collect();
        let count = member.iter().filter(|&&m| m).count();
        if count > 0 {
            by_split.push(SplitBreakdown {
                split,
                item_count: count,
                per_method: accuracy_rows(methods, &correctness, |i| member[i]),
            });
        }
    }

    let mut categories: Vec<String> = answered_items
        .iter()
        .filter_map(|it| it.category.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut by_category = Vec::new();
    for category in categories.drain(..) {
        let member: Vec<bool> = answered_items
            .iter()
            .map(|it| it.category.as_deref() == Some(category.as_str()))
            .collect();
        let count = member.iter().filter(|&&m| m).count();
        by_category.push(CategoryBreakdown {
            category,
            item_count: count,
            per_method: accuracy_rows(methods, &correctness, |i| member[i]),
        });
    }

    let instances: Vec<InstanceRecord> = answered
        .into_iter()
        .flat_map(|(_, records)| records)
        .collect();

    let mut tasks: Vec<TaskKind> = Vec::new();
    for item in items {
        if !tasks.contains(&item.task_kind) {
            tasks.push(item.task_kind);
        }
    }

    let mut draft = EvalReport {
        model: backend.model_id().to_string(),
        tasks,
        methods: methods.to_vec(),
        item_count: correctness.len(),
        aggregate,
        by_split,
        by_category,
        confusion: Vec::new(),
        skipped,
        instances,
    };
    let mut confusion = Vec::new();
    for &a in methods {
        for &b in methods {
            if a != b {
                confusion.push(ConfusionCell {
                    method_a: a,
                    method_b: b,
                    counts: draft.method_confusion(a, b)?,
                });
            }
        }
    }
    draft.confusion = confusion;
    Ok(draft)
}

fn accuracy_rows(
    methods: &[MethodId],
    correctness: &[Vec<bool>],
    include: impl Fn(usize) -> bool,
) -> Vec<MethodAccuracy> {
    let total = (0..correctness.len()).filter(|&i| include(i)).count();
    methods
        .iter()
        .enumerate()
        .map(|(m_idx, &method)| {
            let correct_count = correctness
                .iter()
                .enumerate()
                .filter(|(i, row)| include(*i) && row[m_idx])
                .count();
            MethodAccuracy {
                method,
                correct_count,
                accuracy: if total == 0 {
                    0.0
                } else {
                    correct_count as f64 / total as f64
                },
            }
        })
        .collect()
}

fn assemble_item(
    item: &MCItem,
    methods: &[MethodId],
    prior_mode: &PriorMode,
    score_of: &HashMap<&Pair, &Result<crate::backend::ContinuationScore, String>>,
) -> Result<Vec<InstanceRecord>, String> {
    let lookup = |ctx: &str, cont: &str| -> Result<&crate::backend::ContinuationScore, String> {
        match score_of.get(&(ctx.to_string(), cont.to_string())) {
            Some(Ok(score)) => Ok(score),
            Some(Err(e)) => Err(format!("scoring ({ctx:?}, {cont:?}): {e}")),
            None => Err(format!("missing score for ({ctx:?}, {cont:?})")),
        }
    };
    let prior_ctxs = prior_contexts_for(item, prior_mode);
    let mut cands = Vec::with_capacity(item.candidates.len());
    for (idx, cand) in item.candidates.iter().enumerate() {
        let post = lookup(&item.prompt, cand)?;
        let prior_logps: Vec<f64> = prior_ctxs
            .iter()
            .map(|ctx| lookup(ctx, cand).map(|s| s.total_logprob))
            .collect::<Result<_, _>>()?;
        let logp_prior = if prior_logps.len() == 1 {
            prior_logps[0]
        } else {
            log_mean_exp(&prior_logps)
        };
        cands.push(
            ScoredCandidate::new(idx, cand.clone(), post.total_logprob, logp_prior, post.token_count)
                .map_err(|e| e.to_string())?,
        );
    }
    let mut records = Vec::with_capacity(methods.len());
    for &method in methods {
        let selection = select(method, &cands).map_err(|e| e.to_string())?;
        let chosen = &cands[selection.chosen_index];
        records.push(InstanceRecord {
            item_id: item.id.clone(),
            method,
            chosen_index: selection.chosen_index,
            chosen_text: chosen.text().to_string(),
            correct: item.correct_indices.contains(&selection.chosen_index),
            logp_post: chosen.logp_post(),
            logp_prior: chosen.logp_prior(),
            tau: tau(chosen),
        });
    }
    Ok(records)
}

/// Everything `evaluate` leaves on disk, plus the report itself.
pub struct EvalOutcome {
    pub report: EvalReport,
    pub warnings: Vec<String>,
    pub report_json: PathBuf,
    pub report_txt: PathBuf,
    pub instances_jsonl: PathBuf,
}

/// Loads the configured datasets, builds the backend, evaluates, and writes
/// `report.json`, `report.txt` and `instances.jsonl` under the output
/// directory. On an aborting item failure the completed instance records
/// are flushed to `instances.jsonl` first.
pub fn evaluate(config: &RunConfig) -> Result<EvalOutcome, HarnessError> {
    config.validate()?;

    let mut items = Vec::new();
    let mut warnings = Vec::new();
    for spec in &config.datasets {
        let mut loaded = benchmarks::load(spec.kind, &spec.path)?;
        items.append(&mut loaded.items);
        warnings.append(&mut loaded.warnings);
    }

    let backend = build_backend(config)?;
    match evaluate_items(
        &items,
        backend.as_ref(),
        &config.methods,
        config.jobs,
        &config.prior_mode,
        config.skip_errors,
    ) {
        Ok(report) => {
            let paths = report::write_reports(&report, &config.out_dir)?;
            Ok(EvalOutcome {
                report,
                warnings,
                report_json: paths.report_json,
                report_txt: paths.report_txt,
                instances_jsonl: paths.instances_jsonl,
            })
        }
        Err(HarnessError::ItemFailed {
            item_id,
            message,
            partial,
        }) => {
            std::fs::create_dir_all(&config.out_dir)?;
            report::write_instances(&partial, &config.out_dir.join("instances.jsonl"))?;
            Err(HarnessError::ItemFailed {
                item_id,
                message,
                partial: Vec::new(),
            })
        }
        Err(other) => Err(other),
    }
}

/// Builds the backend described by the config. Exposed so callers scoring
/// ad-hoc text (outside a dataset run) construct it the same way.
pub fn build_backend(config: &RunConfig) -> Result<Box<dyn Backend>, HarnessError> {
    match config.backend.kind {
        BackendKind::Ngram => {
            let corpus_path = config.corpus_path.as_ref().ok_or_else(|| {
                HarnessError::InvalidConfig("ngram backend requires corpus_path".into())
            })?;
            let corpus = std::fs::read_to_string(corpus_path)?;
            Ok(Box::new(NgramBackend::train(
                &corpus,
                config.ngram_order,
                config.ngram_k,
            )?))
        }
        BackendKind::Remote => Ok(Box::new(RemoteBackend::new(
            &config.backend,
            config.model.clone(),
        )?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_mean_exp_of_equal_values_is_identity() {
        let v = [-2.5, -2.5, -2.5];
        assert!((log_mean_exp(&v) - (-2.5)).abs() < 1e-12);
    }

    #[test]
    fn log_mean_exp_matches_naive_in_safe_range() {
        let v: [f64; 3] = [-1.0, -2.0, -3.0];
        let naive = ((v.iter().map(|x| x.exp()).sum::<f64>()) / 3.0).ln();
        assert!((log_mean_exp(&v) - naive).abs() < 1e-12);
    }

    #[test]
    fn log_mean_exp_survives_deep_negatives() {
        let v = [-5000.0, -5001.0];
        let got = log_mean_exp(&v);
        assert!(got.is_finite());
        assert!(got < -4999.0 && got > -5002.0);
    }

    #[test]
    fn config_validation() {
        let mut config = RunConfig {
            datasets: vec![DatasetSpec {
                kind: TaskKind::Copa,
                path: "x.xml".into(),
            }],
            backend: BackendConfig::ngram(),
            model: "m".into(),
            corpus_path: None,
            ngram_order: 3,
            ngram_k: 0.01,
            methods: vec![MethodId::MaxPost],
            jobs: 1,
            out_dir: "out".into(),
            prior_mode: PriorMode::Item,
            skip_errors: false,
            seed: 0,
        };
        assert!(config.validate().is_ok());
        config.methods.clear();
        assert!(config.validate().is_err());
        config.methods = vec![MethodId::MaxPost];
        config.datasets.clear();
        assert!(config.validate().is_err());
    }
}
