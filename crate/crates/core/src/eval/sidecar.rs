//! Sidecar-file adapters: evaluation inputs computed by real models
//! elsewhere, supplied as files keyed by record id.
//!
//! Report embeddings use the embedding formats from the index module (one
//! row per id). Token embeddings use the same formats with one row per
//! token, rows grouped by record id in token order. Entity sets are a JSON
//! object mapping the decimal record id to an array of strings.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::embedders::{MapEntityExtractor, MapReportEmbedder, MapTokenEmbedder};
use super::EvalError;
use crate::embedding::{EmbeddingSet, EmbeddingVector};

fn vector_at(set: &EmbeddingSet, row: usize) -> EmbeddingVector {
    EmbeddingVector::new(set.row(row).to_vec()).expect("sidecar rows validated on load")
}

/// Joins id-keyed report embeddings to the id-keyed texts they describe,
/// extending `embedder` so those texts resolve to the supplied vectors.
pub fn extend_report_embedder(
    embedder: &mut MapReportEmbedder,
    texts: &[(u64, String)],
    set: &EmbeddingSet,
    what: &str,
) -> Result<(), EvalError> {
    let mut rows: HashMap<u64, usize> = HashMap::with_capacity(set.len());
    for (row, &id) in set.record_ids.iter().enumerate() {
        if rows.insert(id, row).is_some() {
            return Err(EvalError::InconsistentSidecar(format!(
                "{what}: duplicate embedding row for id {id}"
            )));
        }
    }
    for (id, text) in texts {
        let row = rows
            .get(id)
            .ok_or_else(|| EvalError::MissingSidecar(format!("{what}: id {id}")))?;
        embedder.insert(text.clone(), vector_at(set, *row))?;
    }
    Ok(())
}

/// Like [`extend_report_embedder`] for per-token embeddings: consecutive
/// rows sharing a record id form that record's token sequence.
pub fn extend_token_embedder(
    embedder: &mut MapTokenEmbedder,
    texts: &[(u64, String)],
    set: &EmbeddingSet,
    what: &str,
) -> Result<(), EvalError> {
    let mut grouped: HashMap<u64, Vec<EmbeddingVector>> = HashMap::new();
    for (row, &id) in set.record_ids.iter().enumerate() {
        grouped.entry(id).or_default().push(vector_at(set, row));
    }
    for (id, text) in texts {
        let vectors = grouped
            .get(id)
            .ok_or_else(|| EvalError::MissingSidecar(format!("{what}: id {id}")))?;
        embedder.insert(text.clone(), vectors.clone())?;
    }
    Ok(())
}

/// Loads an id-keyed entity file: `{"<id>": ["term", ...], ...}`.
pub fn load_entities(path: &Path) -> Result<HashMap<u64, BTreeSet<String>>, EvalError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| EvalError::MissingSidecar(format!("{}: {e}", path.display())))?;
    let parsed: HashMap<String, Vec<String>> = serde_json::from_str(&raw)
        .map_err(|e| EvalError::InconsistentSidecar(format!("{}: {e}", path.display())))?;
    let mut out = HashMap::with_capacity(parsed.len());
    for (key, terms) in parsed {
        let id: u64 = key.parse().map_err(|_| {
            EvalError::InconsistentSidecar(format!("{}: non-numeric id {key:?}", path.display()))
        })?;
        out.insert(id, terms.into_iter().map(|t| t.to_lowercase()).collect());
    }
    Ok(out)
}

/// Extends `extractor` so each text resolves to its id-keyed entity set.
pub fn extend_extractor(
    extractor: &mut MapEntityExtractor,
    texts: &[(u64, String)],
    entities: &HashMap<u64, BTreeSet<String>>,
    what: &str,
) -> Result<(), EvalError> {
    for (id, text) in texts {
        let set = entities
            .get(id)
            .ok_or_else(|| EvalError::MissingSidecar(format!("{what}: id {id}")))?;
        extractor.insert(text.clone(), set.clone())?;
    }
    Ok(())
}
