//! Loader for the TruthfulQA multiple-choice CSV.
//!
//! The file is a CSV with one row per question carrying the question text,
//! its category, whether it was adversarially filtered, a best answer, and
//! semicolon-separated lists of further correct and incorrect answers. The
//! candidate list is the first-occurrence deduplicated union of
//! `[best] ++ correct ++ incorrect`, so a best answer repeated in the
//! correct list occupies a single slot.

use std::collections::HashMap;
use std::path::Path;

use super::{read_utf8, DataError, LoadedDataset, MCItem, SplitTag, TaskKind};

const COL_TYPE: &str = "type";
const COL_CATEGORY: &str = "category";
const COL_QUESTION: &str = "question";
const COL_BEST: &str = "best answer";
const COL_CORRECT: &str = "correct answers";
const COL_INCORRECT: &str = "incorrect answers";

/// The reduced context used to measure answer priors for this task.
pub const TRUTHFULQA_PRIOR_CONTEXT: &str = "?";

pub fn load_truthfulqa(path: &Path) -> Result<LoadedDataset, DataError> {
    let text = read_utf8(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_reader(text.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| DataError::ParseError {
            row: 1,
            message: format!("bad header row: {e}"),
        })?
        .clone();
    let col = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let type_col = col(COL_TYPE)?;
    let category_col = col(COL_CATEGORY)?;
    let question_col = col(COL_QUESTION)?;
    let best_col = col(COL_BEST)?;
    let correct_col = col(COL_CORRECT)?;
    let incorrect_col = col(COL_INCORRECT)?;

    let mut out = LoadedDataset::default();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 2; // 1-based, after the header
        let record = record.map_err(|e| DataError::ParseError {
            row,
            message: format!("bad csv record: {e}"),
        })?;
        let field = |i: usize| -> Result<&str, DataError> {
            record.get(i).map(str::trim).ok_or(DataError::ParseError {
                row,
                message: format!("missing field {i}"),
            })
        };

        let split_tag = match field(type_col)? {
            t if t.eq_ignore_ascii_case("adversarial") => SplitTag::Filtered,
            t if t.eq_ignore_ascii_case("non-adversarial") => SplitTag::Unfiltered,
            other => {
                return Err(DataError::ParseError {
                    row,
                    message: format!("unknown question type: {other:?}"),
                })
            }
        };
        let question = field(question_col)?.to_string();
        if question.is_empty() {
            return Err(DataError::ParseError {
                row,
                message: "empty question".into(),
            });
        }
        let category = field(category_col)?.to_string();

        let best = field(best_col)?;
        let correct = split_answers(field(correct_col)?);
        let incorrect = split_answers(field(incorrect_col)?);

        let mut candidates: Vec<String> = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut push = |answer: &str, candidates: &mut Vec<String>| -> usize {
            if let Some(&i) = seen.get(answer) {
                return i;
            }
            let i = candidates.len();
            candidates.push(answer.to_string());
            seen.insert(answer.to_string(), i);
            i
        };

        let mut correct_indices = std::collections::BTreeSet::new();
        if !best.is_empty() {
            correct_indices.insert(push(best, &mut candidates));
        }
        for answer in &correct {
            correct_indices.insert(push(answer, &mut candidates));
        }
        if correct_indices.is_empty() {
            return Err(DataError::EmptyAnswerSet { row });
        }
        let incorrect_start = candidates.len();
        for answer in &incorrect {
            push(answer, &mut candidates);
        }
        if candidates.len() == incorrect_start {
            out.warnings.push(format!(
                "row {row}: item has no incorrect candidates"
            ));
        }

        let item = MCItem {
            id: format!("tqa-{:04}", idx + 1),
            task_kind: TaskKind::TruthfulQa,
            prompt: question,
            prior_context: TRUTHFULQA_PRIOR_CONTEXT.to_string(),
            candidates,
            correct_indices,
            category: Some(category),
            split_tag: Some(split_tag),
        };
        item.validate(row)?;
        out.items.push(item);
    }
    if out.items.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    Ok(out)
}

fn split_answers(field: &str) -> Vec<String> {
    field
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}
