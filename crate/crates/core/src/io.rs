//! Line-delimited JSON files.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("line {line}: {source}")]
    Record { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads every non-blank line as one record.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| JsonlError::Record { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a, W: Write>(
    mut writer: W,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<(), JsonlError> {
    for r in records {
        serde_json::to_writer(&mut writer, r).map_err(|e| JsonlError::Io(e.into()))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
