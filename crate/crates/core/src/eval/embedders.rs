//! Deterministic embedders and extractors.
//!
//! The hashed implementations make hermetic evaluation possible with no
//! model weights: same text, same vectors, on every run and platform. The
//! map-backed implementations serve two roles: fixtures in tests and the
//! adapters behind sidecar files of real-model outputs.

use std::collections::{BTreeSet, HashMap};

use super::{EntityExtractor, EvalError, ReportEmbedder, TokenEmbedder};
use crate::embedding::EmbeddingVector;
use crate::util::fnv1a64;

fn bucket(token: &str, dim: usize) -> usize {
    (fnv1a64(token.as_bytes()) % dim as u64) as usize
}

/// Whitespace tokens, lowercased, with edge punctuation stripped; tokens
/// that are all punctuation vanish.
fn hash_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
}

/// Bag-of-words report embedder: lowercased whitespace tokens (edge
/// punctuation stripped) hashed into `dim` count buckets.
#[derive(Debug, Clone)]
pub struct HashedBagOfWordsEmbedder {
    dim: usize,
}

impl HashedBagOfWordsEmbedder {
    pub fn new(dim: usize) -> Self {
        HashedBagOfWordsEmbedder { dim: dim.max(1) }
    }
}

impl Default for HashedBagOfWordsEmbedder {
    fn default() -> Self {
        HashedBagOfWordsEmbedder::new(1024)
    }
}

impl ReportEmbedder for HashedBagOfWordsEmbedder {
    fn embed_report(&self, text: &str) -> Result<EmbeddingVector, EvalError> {
        let mut counts = vec![0f32; self.dim];
        for token in hash_tokens(text) {
            counts[bucket(&token, self.dim)] += 1.0;
        }
        EmbeddingVector::new(counts).map_err(|_| EvalError::EmptyText)
    }
}

/// Per-token embedder: each lowercased token maps to the unit basis vector
/// of its hash bucket, so equal tokens match with cosine 1 and distinct
/// tokens are orthogonal (modulo bucket collisions).
#[derive(Debug, Clone)]
pub struct HashedTokenEmbedder {
    dim: usize,
}

impl HashedTokenEmbedder {
    pub fn new(dim: usize) -> Self {
        HashedTokenEmbedder { dim: dim.max(1) }
    }
}

impl Default for HashedTokenEmbedder {
    fn default() -> Self {
        HashedTokenEmbedder::new(1024)
    }
}

impl TokenEmbedder for HashedTokenEmbedder {
    fn embed_tokens(&self, text: &str) -> Result<Vec<EmbeddingVector>, EvalError> {
        Ok(hash_tokens(text)
            .map(|token| {
                let mut v = vec![0f32; self.dim];
                v[bucket(&token, self.dim)] = 1.0;
                EmbeddingVector::assume_normalized(v)
            })
            .collect())
    }
}

/// Entity extractor that treats every lowercased token (stripped of edge
/// punctuation) as an entity.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenSetExtractor;

impl EntityExtractor for TokenSetExtractor {
    fn extract(&self, text: &str) -> Result<BTreeSet<String>, EvalError> {
        Ok(text
            .split_whitespace()
            .map(|t| {
                t.trim_matches(|c: char| !c.is_alphanumeric())
                    .to_lowercase()
            })
            .filter(|t| !t.is_empty())
            .collect())
    }
}

/// Entity extractor that reports which vocabulary terms occur in the text
/// (substring match on the lowercased text, so multi-word terms work).
#[derive(Debug, Clone)]
pub struct KeywordEntityExtractor {
    vocabulary: Vec<String>,
}

impl KeywordEntityExtractor {
    pub fn new(vocabulary: Vec<String>) -> Self {
        KeywordEntityExtractor {
            vocabulary: vocabulary.into_iter().map(|t| t.to_lowercase()).collect(),
        }
    }
}

impl EntityExtractor for KeywordEntityExtractor {
    fn extract(&self, text: &str) -> Result<BTreeSet<String>, EvalError> {
        let haystack = text.to_lowercase();
        Ok(self
            .vocabulary
            .iter()
            .filter(|term| haystack.contains(term.as_str()))
            .cloned()
            .collect())
    }
}

/// Report embedder backed by an exact text-to-vector map.
#[derive(Debug, Clone, Default)]
pub struct MapReportEmbedder {
    by_text: HashMap<String, EmbeddingVector>,
}

impl MapReportEmbedder {
    pub fn from_pairs(pairs: Vec<(String, EmbeddingVector)>) -> Self {
        MapReportEmbedder {
            by_text: pairs.into_iter().collect(),
        }
    }

    /// Adds a text/vector pair, rejecting a conflicting re-registration of
    /// the same text.
    pub fn insert(&mut self, text: String, vector: EmbeddingVector) -> Result<(), EvalError> {
        if let Some(existing) = self.by_text.get(&text) {
            if existing != &vector {
                return Err(EvalError::InconsistentSidecar(format!(
                    "two different embeddings for text {:?}",
                    truncate(&text)
                )));
            }
            return Ok(());
        }
        self.by_text.insert(text, vector);
        Ok(())
    }
}

impl ReportEmbedder for MapReportEmbedder {
    fn embed_report(&self, text: &str) -> Result<EmbeddingVector, EvalError> {
        self.by_text
            .get(text)
            .cloned()
            .ok_or_else(|| EvalError::MissingSidecar(truncate(text)))
    }
}

/// Token embedder backed by an exact text-to-token-vectors map.
#[derive(Debug, Clone, Default)]
pub struct MapTokenEmbedder {
    by_text: HashMap<String, Vec<EmbeddingVector>>,
}

impl MapTokenEmbedder {
    pub fn from_pairs(pairs: Vec<(String, Vec<EmbeddingVector>)>) -> Self {
        MapTokenEmbedder {
            by_text: pairs.into_iter().collect(),
        }
    }

    pub fn insert(&mut self, text: String, vectors: Vec<EmbeddingVector>) -> Result<(), EvalError> {
        if let Some(existing) = self.by_text.get(&text) {
            if existing != &vectors {
                return Err(EvalError::InconsistentSidecar(format!(
                    "two different token embeddings for text {:?}",
                    truncate(&text)
                )));
            }
            return Ok(());
        }
        self.by_text.insert(text, vectors);
        Ok(())
    }
}

impl TokenEmbedder for MapTokenEmbedder {
    fn embed_tokens(&self, text: &str) -> Result<Vec<EmbeddingVector>, EvalError> {
        self.by_text
            .get(text)
            .cloned()
            .ok_or_else(|| EvalError::MissingSidecar(truncate(text)))
    }
}

/// Entity extractor backed by an exact text-to-entities map.
#[derive(Debug, Clone, Default)]
pub struct MapEntityExtractor {
    by_text: HashMap<String, BTreeSet<String>>,
}

impl MapEntityExtractor {
    pub fn from_pairs(pairs: Vec<(String, BTreeSet<String>)>) -> Self {
        MapEntityExtractor {
            by_text: pairs.into_iter().collect(),
        }
    }

    pub fn insert(&mut self, text: String, entities: BTreeSet<String>) -> Result<(), EvalError> {
        if let Some(existing) = self.by_text.get(&text) {
            if existing != &entities {
                return Err(EvalError::InconsistentSidecar(format!(
                    "two different entity sets for text {:?}",
                    truncate(&text)
                )));
            }
            return Ok(());
        }
        self.by_text.insert(text, entities);
        Ok(())
    }
}

impl EntityExtractor for MapEntityExtractor {
    fn extract(&self, text: &str) -> Result<BTreeSet<String>, EvalError> {
        self.by_text
            .get(text)
            .cloned()
            .ok_or_else(|| EvalError::MissingSidecar(truncate(text)))
    }
}

fn truncate(text: &str) -> String {
    const LIMIT: usize = 60;
    if text.chars().count() <= LIMIT {
        text.to_string()
    } else {
        let cut: String = text.chars().take(LIMIT).collect();
        format!("{cut}...")
    }
}
