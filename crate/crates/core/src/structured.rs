//! Structured impression output: parsing, validation, serialization.
//!
//! Generated text may wrap the JSON object in prose, so parsing extracts the
//! first balanced `{...}` (string-aware) before deserializing. The object
//! carries an `impression` string and a list of attribute tuples under
//! `attributes` (or `findings`, which some generations use); tuples are
//! validated against the vocabulary lists case-insensitively.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::VocabLists;

#[derive(Debug, Error, PartialEq)]
pub enum StructuredError {
    #[error("no JSON object found in text")]
    NotJson,
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("term not in vocabulary: {0}")]
    VocabViolation(String),
}

/// One extracted finding. `pathology` is always present; the other
/// attributes may be empty strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeTuple {
    pub pathology: String,
    #[serde(default)]
    pub positional: String,
    #[serde(default)]
    pub severity: String,
    #[serde(default)]
    pub size: String,
}

/// A structured impression: free-text summary plus attribute tuples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StructuredImpression {
    pub impression: String,
    pub attributes: Vec<AttributeTuple>,
}

impl StructuredImpression {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("structured impression serializes")
    }
}

/// Returns the first balanced top-level JSON object in `text`, skipping
/// braces inside string literals.
fn extract_json_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

fn vocab_check(term: &str, list: &[String]) -> Result<(), StructuredError> {
    let needle = term.trim().to_lowercase();
    if list.iter().any(|t| t == &needle) {
        Ok(())
    } else {
        Err(StructuredError::VocabViolation(term.trim().to_string()))
    }
}

/// Parses generated text into a validated [`StructuredImpression`].
///
/// Tolerates prose around the JSON object. Every tuple must name a
/// pathology drawn from `vocab.pathology`; positional, severity, and size
/// may be empty but must come from their lists otherwise. Matching is
/// case-insensitive on trimmed terms.
pub fn parse_structured(
    text: &str,
    vocab: &VocabLists,
) -> Result<StructuredImpression, StructuredError> {
    let json = extract_json_object(text).ok_or(StructuredError::NotJson)?;
    let value: serde_json::Value =
        serde_json::from_str(json).map_err(|_| StructuredError::NotJson)?;
    let obj = value
        .as_object()
        .ok_or_else(|| StructuredError::SchemaViolation("top-level object".into()))?;

    let impression = obj
        .get("impression")
        .and_then(|v| v.as_str())
        .ok_or_else(|| StructuredError::SchemaViolation("impression".into()))?
        .trim()
        .to_string();

    let tuples = obj
        .get("attributes")
        .or_else(|| obj.get("findings"))
        .ok_or_else(|| StructuredError::SchemaViolation("attributes".into()))?
        .as_array()
        .ok_or_else(|| StructuredError::SchemaViolation("attributes".into()))?;

    let mut attributes = Vec::with_capacity(tuples.len());
    for tuple in tuples {
        let tuple = tuple
            .as_object()
            .ok_or_else(|| StructuredError::SchemaViolation("attribute tuple".into()))?;
        let field = |name: &str| -> Result<String, StructuredError> {
            match tuple.get(name) {
                None | Some(serde_json::Value::Null) => Ok(String::new()),
                Some(serde_json::Value::String(s)) => Ok(s.trim().to_string()),
                Some(_) => Err(StructuredError::SchemaViolation(name.to_string())),
            }
        };
        let pathology = field("pathology")?;
        if pathology.is_empty() {
            return Err(StructuredError::SchemaViolation("pathology".into()));
        }
        vocab_check(&pathology, &vocab.pathology)?;
        let positional = field("positional")?;
        if !positional.is_empty() {
            vocab_check(&positional, &vocab.positional)?;
        }
        let severity = field("severity")?;
        if !severity.is_empty() {
            vocab_check(&severity, &vocab.severity)?;
        }
        let size = field("size")?;
        if !size.is_empty() {
            vocab_check(&size, &vocab.size)?;
        }
        attributes.push(AttributeTuple {
            pathology,
            positional,
            severity,
            size,
        });
    }

    Ok(StructuredImpression {
        impression,
        attributes,
    })
}
