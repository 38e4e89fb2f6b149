//! Loader for the COPA XML corpus.
//!
//! Each `<item>` carries a premise and two alternatives plus an `asks-for`
//! attribute saying whether the alternatives are candidate causes or
//! effects. The conditioning prompt appends the matching connective
//! ("because" / "so") to the premise, and the bare connective doubles as the
//! reduced prior context.

use std::path::Path;

use super::{read_utf8, DataError, LoadedDataset, MCItem, TaskKind};

pub fn load_copa(path: &Path) -> Result<LoadedDataset, DataError> {
    let text = read_utf8(path)?;
    let doc = roxmltree::Document::parse(&text).map_err(|e| DataError::ParseError {
        row: 0,
        message: format!("bad xml: {e}"),
    })?;

    let mut out = LoadedDataset::default();
    for (idx, node) in doc
        .descendants()
        .filter(|n| n.has_tag_name("item"))
        .enumerate()
    {
        let row = idx + 1;
        let id = node.attribute("id").unwrap_or("").to_string();
        if id.is_empty() {
            return Err(DataError::ParseError {
                row,
                message: "item missing id attribute".into(),
            });
        }
        let asks_for = node.attribute("asks-for").ok_or(DataError::ParseError {
            row,
            message: "item missing asks-for attribute".into(),
        })?;
        let connective = match asks_for {
            "cause" => "because",
            "effect" => "so",
            other => {
                return Err(DataError::ParseError {
                    row,
                    message: format!("unknown asks-for value: {other:?}"),
                })
            }
        };
        let gold_str = node
            .attribute("most-plausible-alternative")
            .ok_or(DataError::ParseError {
                row,
                message: "item missing most-plausible-alternative attribute".into(),
            })?;
        let gold: i64 = gold_str.parse().map_err(|_| DataError::ParseError {
            row,
            message: format!("non-numeric gold index: {gold_str:?}"),
        })?;
        if gold != 1 && gold != 2 {
            return Err(DataError::InvalidGold { row, gold });
        }

        let child_text = |tag: &str| -> Result<String, DataError> {
            node.children()
                .find(|c| c.has_tag_name(tag))
                .and_then(|c| c.text())
                .map(|t| t.trim().to_string())
                .filter(|t| !t.is_empty())
                .ok_or_else(|| DataError::ParseError {
                    row,
                    message: format!("item {id} missing <{tag}>"),
                })
        };
        let premise = child_text("p")?;
        let alt1 = child_text("a1")?;
        let alt2 = child_text("a2")?;

        let item = MCItem {
            id: format!("copa-{id}"),
            task_kind: TaskKind::Copa,
            prompt: format!("{premise} {connective}"),
            prior_context: connective.to_string(),
            candidates: vec![alt1, alt2],
            correct_indices: [(gold - 1) as usize].into_iter().collect(),
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
