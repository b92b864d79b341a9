//! JSONL record shapes shared by the subcommands.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use radrag_core::structured::AttributeTuple;

/// One generated impression, as written by `radrag generate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImpressionRecord {
    pub query_id: u64,
    pub impression: String,
    /// Retrieved context records joined with single spaces; the text the
    /// hallucination score compares against.
    pub context: String,
    pub provenance: Vec<u64>,
    pub scores: Vec<f64>,
    pub llm_calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Vec<AttributeTuple>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured_error: Option<String>,
}

/// One id/text line, used for query texts, references, and contexts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextRecord {
    pub query_id: u64,
    pub text: String,
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file =
        std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("cannot read {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: bad record", path.display(), lineno + 1))?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file =
        std::fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut writer = std::io::BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_texts(path: &Path) -> Result<Vec<(u64, String)>> {
    Ok(read_jsonl::<TextRecord>(path)?
        .into_iter()
        .map(|r| (r.query_id, r.text))
        .collect())
}
