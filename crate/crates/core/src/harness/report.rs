//! Report serialization: canonical JSON, aligned text tables, and the
//! instance-level JSONL dump.
//!
//! The canonical report stores full doubles (shortest round-trip form);
//! only the display tables round, half-even, to two decimals. Every output
//! file ends with a trailing newline and contains no wall-clock data, so
//! identical runs produce identical bytes.

use std::io::Write;
use std::path::{Path, PathBuf};

use super::{EvalReport, InstanceRecord};

pub struct ReportPaths {
    pub report_json: PathBuf,
    pub report_txt: PathBuf,
    pub instances_jsonl: PathBuf,
}

/// Writes `report.json`, `report.txt` and `instances.jsonl` under `out_dir`.
pub fn write_reports(report: &EvalReport, out_dir: &Path) -> std::io::Result<ReportPaths> {
    std::fs::create_dir_all(out_dir)?;
    let paths = ReportPaths {
        report_json: out_dir.join("report.json"),
        report_txt: out_dir.join("report.txt"),
        instances_jsonl: out_dir.join("instances.jsonl"),
    };

    let mut json = serde_json::to_string_pretty(report).expect("report serialization cannot fail");
    json.push('\n');
    std::fs::write(&paths.report_json, json)?;

    std::fs::write(&paths.report_txt, render_tables(report))?;
    write_instances(&report.instances, &paths.instances_jsonl)?;
    Ok(paths)
}

/// Writes one JSON object per instance record, trailing newline included.
pub fn write_instances(records: &[InstanceRecord], path: &Path) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in records {
        let line = serde_json::to_string(record).expect("record serialization cannot fail");
        writeln!(out, "{line}")?;
    }
    out.flush()
}

/// All display tables, in a fixed order.
pub fn render_tables(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&render_aggregate_table(report));
    if !report.by_split.is_empty() {
        out.push('\n');
        out.push_str(&render_split_table(report));
    }
    if !report.by_category.is_empty() {
        out.push('\n');
        out.push_str(&render_category_table(report));
    }
    if !report.skipped.is_empty() {
        out.push('\n');
        out.push_str(&format!(
            "Skipped items (excluded from all denominators): {}\n",
            report.skipped.len()
        ));
        for s in &report.skipped {
            out.push_str(&format!("  {}: {}\n", s.item_id, s.error));
        }
    }
    out
}

/// One row per model, one column per method.
pub fn render_aggregate_table(report: &EvalReport) -> String {
    let mut header = vec!["Model".to_string()];
    header.extend(report.methods.iter().map(|m| m.label()));
    let mut row = vec![report.model.clone()];
    row.extend(report.aggregate.iter().map(|a| format_accuracy(a.accuracy)));
    let mut out = format!("Aggregate accuracy over {} items\n", report.item_count);
    out.push_str(&render_grid(&header, &[row]));
    out
}

fn render_split_table(report: &EvalReport) -> String {
    let mut header = vec!["Method".to_string()];
    header.extend(
        report
            .by_split
            .iter()
            .map(|s| format!("{:?} ({})", s.split, s.item_count)),
    );
    let rows: Vec<Vec<String>> = report
        .methods
        .iter()
        .enumerate()
        .map(|(m_idx, method)| {
            let mut row = vec![method.label()];
            row.extend(
                report
                    .by_split
                    .iter()
                    .map(|s| format_accuracy(s.per_method[m_idx].accuracy)),
            );
            row
        })
        .collect();
    let mut out = String::from("Accuracy by question split\n");
    out.push_str(&render_grid(&header, &rows));
    out
}

fn render_category_table(report: &EvalReport) -> String {
    let mut header = vec!["Category".to_string(), "Items".to_string()];
    header.extend(report.methods.iter().map(|m| m.label()));
    let rows: Vec<Vec<String>> = report
        .by_category
        .iter()
        .map(|c| {
            let mut row = vec![c.category.clone(), c.item_count.to_string()];
            row.extend(c.per_method.iter().map(|a| format_accuracy(a.accuracy)));
            row
        })
        .collect();
    let mut out = String::from("Accuracy by category\n");
    out.push_str(&render_grid(&header, &rows));
    out
}

fn render_grid(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate().take(cols) {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let render_row = |cells: &[String]| -> String {
        let mut line = String::new();
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            if i == 0 {
                line.push_str(&format!("{:<width$}", cell, width = widths[i]));
            } else {
                line.push_str(&format!("{:>width$}", cell, width = widths[i]));
            }
        }
        line.push('\n');
        line
    };
    let mut out = render_row(header);
    out.push_str(&render_row(
        &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>(),
    ));
    for row in rows {
        out.push_str(&render_row(row));
    }
    out
}

/// Accuracy as displayed in the tables: two decimals, ties to even.
pub fn format_accuracy(x: f64) -> String {
    round_half_even_str(x, 2)
}

/// Rounds the shortest decimal representation of `x` to `places` fractional
/// digits with ties going to the even digit. Operates on the decimal string
/// so display rounding is exact and deterministic.
pub fn round_half_even_str(x: f64, places: usize) -> String {
    let s = format!("{x}");
    if s.contains(['e', 'E']) {
        // Exotic magnitudes never show up in accuracy tables; plain
        // formatting is fine there.
        return format!("{x:.places$}");
    }
    let (sign, digits) = match s.strip_prefix('-') {
        Some(rest) => ("-", rest),
        None => ("", s.as_str()),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i.to_string(), f.to_string()),
        None => (digits.to_string(), String::new()),
    };
    if frac_part.len() <= places {
        let padded = format!("{frac_part:0<places$}");
        return assemble(sign, &int_part, &padded);
    }

    let keep: Vec<u8> = frac_part.as_bytes()[..places].to_vec();
    let next = frac_part.as_bytes()[places];
    let rest_nonzero = frac_part.as_bytes()[places + 1..].iter().any(|&b| b != b'0');

    let round_up = match next {
        b'0'..=b'4' => false,
        b'6'..=b'9' => true,
        b'5' if rest_nonzero => true,
        _ => {
            // Exact tie: round so the retained digit becomes even.
            let last_kept = keep
                .last()
                .copied()
                .or_else(|| int_part.bytes().last())
                .unwrap_or(b'0');
            (last_kept - b'0') % 2 == 1
        }
    };

    let mut int_digits: Vec<u8> = int_part.into_bytes();
    let mut frac_digits = keep;
    if round_up {
        let mut carry = true;
        for d in frac_digits.iter_mut().rev() {
            if !carry {
                break;
            }
            if *d == b'9' {
                *d = b'0';
            } else {
                *d += 1;
                carry = false;
            }
        }
        if carry {
            for d in int_digits.iter_mut().rev() {
                if *d == b'9' {
                    *d = b'0';
                } else {
                    *d += 1;
                    carry = false;
                    break;
                }
            }
            if carry {
                int_digits.insert(0, b'1');
            }
        }
    }
    assemble(
        sign,
        std::str::from_utf8(&int_digits).expect("ascii digits"),
        std::str::from_utf8(&frac_digits).expect("ascii digits"),
    )
}

fn assemble(sign: &str, int_part: &str, frac_part: &str) -> String {
    if frac_part.is_empty() {
        format!("{sign}{int_part}")
    } else {
        format!("{sign}{int_part}.{frac_part}")
    }
}
