//! Header-first, comma-delimited text ingestion.
//!
//! A blank line is a record with a single empty field, so a one-column file
//! can carry missing values on empty lines. Double-quoted fields with `""`
//! escapes are accepted.

use std::path::Path;

use super::{RawColumn, RawTable, RawValues};
use crate::error::{bail, Error, Result};

pub fn load_csv(path: impl AsRef<Path>, target_column: Option<&str>) -> Result<RawTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "table".to_string());
    parse_csv(&name, &text, target_column)
}

/// Parse CSV text already in memory.
pub fn parse_csv(name: &str, text: &str, target_column: Option<&str>) -> Result<RawTable> {
    let mut records = split_records(text)?;
    if records.is_empty() {
        bail!(Data, "{name}: missing header line");
    }
    let header = records.remove(0);
    if records.is_empty() {
        bail!(Data, "{name}: no data rows");
    }
    for (i, rec) in records.iter().enumerate() {
        if rec.len() != header.len() {
            bail!(
                Data,
                "{name}: ragged row {} has {} fields, header has {}",
                i + 1,
                rec.len(),
                header.len()
            );
        }
    }
    let n_rows = records.len();
    let mut columns = Vec::with_capacity(header.len());
    for (j, col_name) in header.iter().enumerate() {
        let cells: Vec<Option<&str>> = records
            .iter()
            .map(|r| {
                let c = r[j].trim();
                (!c.is_empty()).then_some(c)
            })
            .collect();
        let parsed: Vec<Option<Option<f64>>> = cells
            .iter()
            .map(|c| c.map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite())))
            .collect();
        let numeric = parsed.iter().all(|c| !matches!(c, Some(None)));
        let values = if numeric {
            RawValues::Numeric(parsed.into_iter().map(|c| c.flatten()).collect())
        } else {
            RawValues::Categorical(cells.iter().map(|c| c.map(str::to_string)).collect())
        };
        columns.push(RawColumn {
            name: col_name.trim().to_string(),
            values,
        });
    }
    if let Some(t) = target_column {
        if !columns.iter().any(|c| c.name == t) {
            bail!(Data, "{name}: target column {t:?} not in header");
        }
    }
    Ok(RawTable {
        name: name.to_string(),
        columns,
        n_rows,
        target: target_column.map(str::to_string),
    })
}

fn split_records(text: &str) -> Result<Vec<Vec<String>>> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let text = text
        .strip_suffix("\r\n")
        .or_else(|| text.strip_suffix('\n'))
        .unwrap_or(text);
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let mut records = Vec::new();
    let mut record = Vec::new();
    let mut field = String::new();
    let mut chars = text.chars().peekable();
    let mut in_quotes = false;
    while let Some(c) = chars.next() {
        if in_quotes {
            match c {
                '"' if chars.peek() == Some(&'"') => {
                    chars.next();
                    field.push('"');
                }
                '"' => in_quotes = false,
                _ => field.push(c),
            }
            continue;
        }
        match c {
            '"' if field.is_empty() => in_quotes = true,
            ',' => record.push(std::mem::take(&mut field)),
            '\r' if chars.peek() == Some(&'\n') => {}
            '\n' => {
                record.push(std::mem::take(&mut field));
                records.push(std::mem::take(&mut record));
            }
            _ => field.push(c),
        }
    }
    if in_quotes {
        return Err(Error::Data("unterminated quoted field".into()));
    }
    record.push(field);
    records.push(record);
    Ok(records)
}
