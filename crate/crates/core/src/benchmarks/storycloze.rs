//! Loader for the Story Cloze validation CSV.
//!
//! Each row has a four-sentence story, two candidate fifth sentences and the
//! index of the right ending. The prompt is the four sentences joined by
//! single spaces; the prior context is the final punctuation character of
//! the fourth sentence, falling back to "." (with a recorded warning) when
//! the sentence ends unpunctuated.

use std::path::Path;

use super::{read_utf8, DataError, LoadedDataset, MCItem, TaskKind};

const COL_ID: &str = "inputstoryid";
const COL_SENTENCES: [&str; 4] = [
    "inputsentence1",
    "inputsentence2",
    "inputsentence3",
    "inputsentence4",
];
const COL_ENDING1: &str = "randomfifthsentencequiz1";
const COL_ENDING2: &str = "randomfifthsentencequiz2";
const COL_ANSWER: &str = "answerrightending";

pub fn load_storycloze(path: &Path) -> Result<LoadedDataset, DataError> {
    let text = read_utf8(path)?;
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());

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
    let id_col = col(COL_ID)?;
    let sentence_cols = [
        col(COL_SENTENCES[0])?,
        col(COL_SENTENCES[1])?,
        col(COL_SENTENCES[2])?,
        col(COL_SENTENCES[3])?,
    ];
    let ending1_col = col(COL_ENDING1)?;
    let ending2_col = col(COL_ENDING2)?;
    let answer_col = col(COL_ANSWER)?;

    let mut out = LoadedDataset::default();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 2;
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

        let id = field(id_col)?.to_string();
        let sentences: Vec<&str> = sentence_cols
            .iter()
            .map(|&c| field(c))
            .collect::<Result<_, _>>()?;
        if sentences.iter().any(|s| s.is_empty()) {
            return Err(DataError::ParseError {
                row,
                message: "empty story sentence".into(),
            });
        }
        let answer_str = field(answer_col)?;
        let answer: i64 = answer_str.parse().map_err(|_| DataError::ParseError {
            row,
            message: format!("non-numeric answer: {answer_str:?}"),
        })?;
        if answer != 1 && answer != 2 {
            return Err(DataError::InvalidGold { row, gold: answer });
        }

        let last = sentences[3];
        let prior_context = match last.chars().last().filter(|c| c.is_ascii_punctuation()) {
            Some(ch) => ch.to_string(),
            None => {
                out.warnings.push(format!(
                    "row {row}: final sentence has no terminal punctuation, using \".\""
                ));
                ".".to_string()
            }
        };

        let item = MCItem {
            id: if id.is_empty() { format!("sc-{row}") } else { id },
            task_kind: TaskKind::StoryCloze,
            prompt: sentences.join(" "),
            prior_context,
            candidates: vec![field(ending1_col)?.to_string(), field(ending2_col)?.to_string()],
            correct_indices: [(answer - 1) as usize].into_iter().collect(),
            category: None,
            split_tag: None,
        };
        item.validate(row)?;
        out.items.push(item);
    }
    if out.items.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    Ok(out)
}
