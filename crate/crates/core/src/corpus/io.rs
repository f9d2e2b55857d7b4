//! JSONL persistence. An optional first line `{"schema": ..., "version": N}`
//! declares the format version; files without it are read as the current one.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::SequenceResult;

use super::SequenceRecord;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

fn load_jsonl<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let display = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            if let Ok(h) = serde_json::from_str::<Header>(&line) {
                if h.schema != schema {
                    return Err(Error::Parse {
                        path: display,
                        line: 1,
                        message: format!("expected schema '{schema}', found '{}'", h.schema),
                    });
                }
                if h.version != SCHEMA_VERSION {
                    return Err(Error::SchemaVersion {
                        found: h.version,
                        expected: SCHEMA_VERSION,
                    });
                }
                continue;
            }
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: display.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

fn save_jsonl<T: Serialize>(path: &Path, schema: &str, items: &[T], meta: Option<serde_json::Value>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(
        &mut w,
        &Header {
            schema: schema.to_string(),
            version: SCHEMA_VERSION,
            meta,
        },
    )?;
    writeln!(w)?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_records(path: &Path) -> Result<Vec<SequenceRecord>> {
    load_jsonl(path, "records")
}

pub fn save_records(path: &Path, records: &[SequenceRecord]) -> Result<()> {
    save_jsonl(path, "records", records, None)
}

pub fn load_results(path: &Path) -> Result<Vec<SequenceResult>> {
    load_jsonl(path, "results")
}

pub fn save_results(path: &Path, results: &[SequenceResult]) -> Result<()> {
    save_jsonl(path, "results", results, None)
}

/// Like [`save_results`], with `meta` (e.g. the run configuration) stored in the header line.
pub fn save_results_with_meta(path: &Path, results: &[SequenceResult], meta: serde_json::Value) -> Result<()> {
    save_jsonl(path, "results", results, Some(meta))
}
