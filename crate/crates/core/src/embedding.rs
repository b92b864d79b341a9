//! Dense embedding vectors and their on-disk formats.
//!
//! Embeddings enter the pipeline from files; no model runs in-process. Two
//! formats are accepted:
//!
//! - binary `EMB1`: magic `"EMB1"`, little-endian u32 count, u32 dim, u8
//!   normalized flag, then `count * dim` f32 values row-major, then `count`
//!   u64 record ids;
//! - JSON lines: one `{"record_id": <u64>, "vector": [<f32>...]}` per line.
//!
//! Values are stored as f32; norms and dot products accumulate in f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("vector has zero norm")]
    DegenerateVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("vector contains a non-finite value")]
    NonFinite,
    #[error("empty vector")]
    EmptyVector,
    #[error("bad embedding file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A fixed-dimension dense float vector.
///
/// `normalized` records whether the values were L2-normalized; when set, the
/// norm is within 1e-5 of one.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
    normalized: bool,
}

impl EmbeddingVector {
    /// Wraps raw values, rejecting empty or non-finite input.
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::EmptyVector);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(EmbeddingVector {
            values,
            normalized: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| v as f64 * v as f64)
            .sum::<f64>()
            .sqrt()
    }

    /// Returns the unit-norm copy of this vector.
    pub fn normalize(&self) -> Result<EmbeddingVector, EmbeddingError> {
        let norm = self.l2_norm();
        if norm == 0.0 {
            return Err(EmbeddingError::DegenerateVector);
        }
        let values = self
            .values
            .iter()
            .map(|&v| (v as f64 / norm) as f32)
            .collect();
        Ok(EmbeddingVector {
            values,
            normalized: true,
        })
    }

    /// Marks an already unit-norm vector as normalized.
    pub(crate) fn assume_normalized(values: Vec<f32>) -> Self {
        EmbeddingVector {
            values,
            normalized: true,
        }
    }
}

/// A batch of embeddings keyed by record id, as read from an embedding file.
///
/// Rows are dense f32, row-major, all of one dimension. Record ids may
/// repeat when the file carries per-token embeddings grouped by record.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub dim: usize,
    pub normalized: bool,
    pub record_ids: Vec<u64>,
    pub values: Vec<f32>,
}

impl EmbeddingSet {
    pub fn new(
        dim: usize,
        normalized: bool,
        record_ids: Vec<u64>,
        values: Vec<f32>,
    ) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::EmptyVector);
        }
        if values.len() != record_ids.len() * dim {
            return Err(EmbeddingError::Format(format!(
                "value count {} does not equal count {} x dim {}",
                values.len(),
                record_ids.len(),
                dim
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(EmbeddingSet {
            dim,
            normalized,
            record_ids,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Writes the binary `EMB1` layout.
    pub fn write_emb1<W: Write>(&self, writer: W) -> Result<(), EmbeddingError> {
        let mut w = BufWriter::new(writer);
        w.write_all(MAGIC)?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&[self.normalized as u8])?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        for id in &self.record_ids {
            w.write_all(&id.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_emb1_to_path(&self, path: &Path) -> Result<(), EmbeddingError> {
        self.write_emb1(File::create(path)?)
    }

    /// Reads the binary `EMB1` layout.
    pub fn read_emb1<R: Read>(reader: R) -> Result<Self, EmbeddingError> {
        let mut r = BufReader::new(reader);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(EmbeddingError::Format("missing EMB1 magic".into()));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let count = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf)?;
        let dim = u32::from_le_bytes(u32buf) as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let normalized = match flag[0] {
            0 => false,
            1 => true,
            other => {
                return Err(EmbeddingError::Format(format!(
                    "bad normalized flag {other}"
                )))
            }
        };
        if dim == 0 && count > 0 {
            return Err(EmbeddingError::Format("zero dim with nonzero count".into()));
        }
        let mut values = vec![0f32; count * dim];
        let mut f32buf = [0u8; 4];
        for v in values.iter_mut() {
            r.read_exact(&mut f32buf)?;
            *v = f32::from_le_bytes(f32buf);
        }
        let mut record_ids = vec![0u64; count];
        let mut u64buf = [0u8; 8];
        for id in record_ids.iter_mut() {
            r.read_exact(&mut u64buf)?;
            *id = u64::from_le_bytes(u64buf);
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(EmbeddingError::Format(
                "trailing bytes after payload".into(),
            ));
        }
        EmbeddingSet::new(dim.max(1), normalized, record_ids, values)
    }

    /// Reads the JSON-lines alternate. All vectors must share one dimension.
    pub fn read_jsonl<R: Read>(reader: R) -> Result<Self, EmbeddingError> {
        use std::io::BufRead;

        #[derive(Deserialize)]
        struct Line {
            record_id: u64,
            vector: Vec<f32>,
        }

        let mut record_ids = Vec::new();
        let mut values = Vec::new();
        let mut dim: Option<usize> = None;
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line)
                .map_err(|e| EmbeddingError::Format(format!("line {}: {}", lineno + 1, e)))?;
            match dim {
                None => dim = Some(parsed.vector.len()),
                Some(d) if d != parsed.vector.len() => {
                    return Err(EmbeddingError::DimMismatch {
                        expected: d,
                        got: parsed.vector.len(),
                    })
                }
                _ => {}
            }
            record_ids.push(parsed.record_id);
            values.extend_from_slice(&parsed.vector);
        }
        let dim = dim.ok_or_else(|| EmbeddingError::Format("no embeddings in file".into()))?;
        EmbeddingSet::new(dim, false, record_ids, values)
    }

    /// Loads either format, sniffing the `EMB1` magic.
    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let mut file = File::open(path)?;
        let mut magic = [0u8; 4];
        let n = file.read(&mut magic)?;
        drop(file);
        let file = File::open(path)?;
        if n == 4 && &magic == MAGIC {
            EmbeddingSet::read_emb1(file)
        } else {
            EmbeddingSet::read_jsonl(file)
        }
    }
}
