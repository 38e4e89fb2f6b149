//! Benchmark file loaders and the unified multiple-choice item model.
//!
//! Each loader turns a locally obtained benchmark file into [`MCItem`]s: a
//! conditioning prompt, a reduced prior context, an ordered candidate list
//! and the set of correct candidate indices.

mod copa;
mod storycloze;
mod truthfulqa;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use copa::load_copa;
pub use storycloze::load_storycloze;
pub use truthfulqa::load_truthfulqa;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column: {0}")]
    MissingColumn(String),
    #[error("row {row}: no correct answer present")]
    EmptyAnswerSet { row: usize },
    #[error("row {row}: {message}")]
    ParseError { row: usize, message: String },
    #[error("row {row}: gold index {gold} is not 1 or 2")]
    InvalidGold { row: usize, gold: i64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("row {row}: {message}")]
    InvariantViolation { row: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    TruthfulQa,
    Copa,
    StoryCloze,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::TruthfulQa => "truthfulqa",
            TaskKind::Copa => "copa",
            TaskKind::StoryCloze => "storycloze",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "truthfulqa" => Ok(TaskKind::TruthfulQa),
            "copa" => Ok(TaskKind::Copa),
            "storycloze" => Ok(TaskKind::StoryCloze),
            other => Err(format!("unknown task kind: {other}")),
        }
    }
}

/// Whether a question was kept because models answered it wrongly during
/// benchmark construction (filtered) or written without that screening.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Filtered,
    Unfiltered,
}

/// One multiple-choice question in the unified model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCItem {
    pub id: String,
    pub task_kind: TaskKind,
    pub prompt: String,
    pub prior_context: String,
    pub candidates: Vec<String>,
    pub correct_indices: BTreeSet<usize>,
    pub category: Option<String>,
    pub split_tag: Option<SplitTag>,
}

impl MCItem {
    /// Checks the structural invariants, including the per-task candidate
    /// count bounds.
    pub fn validate(&self, row: usize) -> Result<(), DataError> {
        let n = self.candidates.len();
        if n < 2 {
            return Err(DataError::InvariantViolation {
                row,
                message: format!("item {} has {n} candidates, need >= 2", self.id),
            });
        }
        if self.correct_indices.is_empty() {
            return Err(DataError::EmptyAnswerSet { row });
        }
        if self.correct_indices.iter().any(|&i| i >= n) {
            return Err(DataError::InvariantViolation {
                row,
                message: format!("item {} has a correct index out of range", self.id),
            });
        }
        match self.task_kind {
            TaskKind::TruthfulQa => {
                if !(3..=25).contains(&n) {
                    return Err(DataError::InvariantViolation {
                        row,
                        message: format!("item {} has {n} candidates, expected 3..=25", self.id),
                    });
                }
            }
            TaskKind::Copa | TaskKind::StoryCloze => {
                if n != 2 || self.correct_indices.len() != 1 {
                    return Err(DataError::InvariantViolation {
                        row,
                        message: format!(
                            "item {} must have exactly 2 candidates and 1 correct",
                            self.id
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Items plus any non-fatal observations made while loading.
#[derive(Debug, Clone, Default)]
pub struct LoadedDataset {
    pub items: Vec<MCItem>,
    pub warnings: Vec<String>,
}

/// Dispatches to the loader for `kind`.
pub fn load(kind: TaskKind, path: &Path) -> Result<LoadedDataset, DataError> {
    match kind {
        TaskKind::TruthfulQa => load_truthfulqa(path),
        TaskKind::Copa => load_copa(path),
        TaskKind::StoryCloze => load_storycloze(path),
    }
}

/// Aggregate statistics over a parsed dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub item_count: usize,
    pub mean_candidates: f64,
    pub filtered_count: usize,
    pub unfiltered_count: usize,
    pub category_histogram: BTreeMap<String, usize>,
}

pub fn compute_stats(items: &[MCItem]) -> Result<DatasetStats, DataError> {
    if items.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let total_candidates: usize = items.iter().map(|i| i.candidates.len()).sum();
    let mut filtered = 0;
    let mut unfiltered = 0;
    let mut histogram: BTreeMap<String, usize> = BTreeMap::new();
    for item in items {
        match item.split_tag {
            Some(SplitTag::Filtered) => filtered += 1,
            Some(SplitTag::Unfiltered) => unfiltered += 1,
            None => {}
        }
        if let Some(cat) = &item.category {
            *histogram.entry(cat.clone()).or_insert(0) += 1;
        }
    }
    Ok(DatasetStats {
        item_count: items.len(),
        mean_candidates: total_candidates as f64 / items.len() as f64,
        filtered_count: filtered,
        unfiltered_count: unfiltered,
        category_histogram: histogram,
    })
}

/// Writes items in the canonical internal format: one JSON object per line,
/// stable field order, trailing newline.
pub fn write_jsonl<W: Write>(items: &[MCItem], mut out: W) -> Result<(), DataError> {
    for item in items {
        let line = serde_json::to_string(item).expect("item serialization cannot fail");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Reads items from the canonical internal format, re-validating invariants.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<MCItem>, DataError> {
    let mut items = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let row = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: MCItem = serde_json::from_str(&line).map_err(|e| DataError::ParseError {
            row,
            message: format!("bad item json: {e}"),
        })?;
        item.validate(row)?;
        items.push(item);
    }
    Ok(items)
}

/// Strips a UTF-8 byte-order mark if present.
pub(crate) fn strip_bom(text: &str) -> &str {
    text.strip_prefix('\u{feff}').unwrap_or(text)
}

/// Reads a file as UTF-8, tolerating a leading BOM.
pub(crate) fn read_utf8(path: &Path) -> Result<String, DataError> {
    let bytes = std::fs::read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| DataError::ParseError {
        row: 0,
        message: format!("file is not valid UTF-8: {e}"),
    })?;
    Ok(strip_bom(&text).to_string())
}
