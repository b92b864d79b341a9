//! Exact top-k dot-product retrieval over an immutable embedding matrix.
//!
//! The index stores one f32 row per corpus record, aligned to the corpus by
//! record id. Queries score every row (f64 accumulation) and select the k
//! best with a bounded min-heap; no approximation. Ties break by ascending
//! record id so results are deterministic and permutation-invariant.
//!
//! With the `parallel` feature the scan fans out over rayon for large
//! matrices; [`top_k_sequential`] is always available, and
//! [`top_k_bruteforce`] (full scan + full sort) is the independent oracle
//! the fast path is tested against.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use thiserror::Error;

use crate::corpus::Corpus;
use crate::embedding::{EmbeddingError, EmbeddingSet, EmbeddingVector};

/// Row counts below this are scanned sequentially even with `parallel` on;
/// the fan-out overhead dominates on small matrices.
#[cfg(feature = "parallel")]
const PARALLEL_CUTOVER: usize = 4096;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: index dim {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("corpus/embedding mismatch: {0}")]
    CorpusEmbeddingMismatch(String),
    #[error("embedding file claims normalized rows but record {record_id} has norm {norm}")]
    NotNormalized { record_id: u64, norm: f64 },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// One retrieval hit: the record, its dot-product score, and its 0-based
/// rank. Within a result list scores are non-increasing by rank and ties
/// are ordered by ascending record id.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub record_id: u64,
    pub score: f64,
    pub rank: usize,
}

/// Immutable dense vector index aligned to a corpus.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    normalized: bool,
    record_ids: Vec<u64>,
    matrix: Vec<f32>, // row-major, len = record_ids.len() * dim
}

impl VectorIndex {
    /// Builds an index for `corpus` from an embedding set.
    ///
    /// Embeddings are matched to corpus records by record id and stored in
    /// corpus order; counts and id sets must agree exactly. When
    /// `normalize` is set every row is L2-normalized so dot product equals
    /// cosine.
    pub fn build(
        corpus: &Corpus,
        embeddings: &EmbeddingSet,
        normalize: bool,
    ) -> Result<Self, IndexError> {
        if embeddings.len() != corpus.len() {
            return Err(IndexError::CorpusEmbeddingMismatch(format!(
                "corpus has {} records, embedding file has {}",
                corpus.len(),
                embeddings.len()
            )));
        }
        let mut by_id: HashMap<u64, usize> = HashMap::with_capacity(embeddings.len());
        for (row, &id) in embeddings.record_ids.iter().enumerate() {
            if by_id.insert(id, row).is_some() {
                return Err(IndexError::CorpusEmbeddingMismatch(format!(
                    "duplicate embedding for record {id}"
                )));
            }
        }
        let dim = embeddings.dim;
        let mut matrix = Vec::with_capacity(corpus.len() * dim);
        let mut record_ids = Vec::with_capacity(corpus.len());
        for rec in corpus.records() {
            let row = *by_id.get(&rec.record_id).ok_or_else(|| {
                IndexError::CorpusEmbeddingMismatch(format!(
                    "no embedding for record {}",
                    rec.record_id
                ))
            })?;
            let values = embeddings.row(row);
            if normalize {
                let vec = EmbeddingVector::new(values.to_vec())?;
                matrix.extend_from_slice(vec.normalize()?.values());
            } else {
                if embeddings.normalized {
                    let norm = values
                        .iter()
                        .map(|&v| v as f64 * v as f64)
                        .sum::<f64>()
                        .sqrt();
                    if (norm - 1.0).abs() > 1e-5 {
                        return Err(IndexError::NotNormalized {
                            record_id: rec.record_id,
                            norm,
                        });
                    }
                }
                matrix.extend_from_slice(values);
            }
            record_ids.push(rec.record_id);
        }
        Ok(VectorIndex {
            dim,
            normalized: normalize || embeddings.normalized,
            record_ids,
            matrix,
        })
    }

    /// Reassembles an index from aligned rows, as produced by
    /// [`VectorIndex::to_embedding_set`].
    pub fn from_embedding_set(set: EmbeddingSet) -> Self {
        VectorIndex {
            dim: set.dim,
            normalized: set.normalized,
            record_ids: set.record_ids,
            matrix: set.values,
        }
    }

    /// The index content as an embedding set, for `EMB1` persistence.
    pub fn to_embedding_set(&self) -> EmbeddingSet {
        EmbeddingSet {
            dim: self.dim,
            normalized: self.normalized,
            record_ids: self.record_ids.clone(),
            values: self.matrix.clone(),
        }
    }

    pub fn save_to_path(&self, path: &Path) -> Result<(), IndexError> {
        Ok(self.to_embedding_set().write_emb1_to_path(path)?)
    }

    pub fn load_from_path(path: &Path) -> Result<Self, IndexError> {
        Ok(VectorIndex::from_embedding_set(EmbeddingSet::read_emb1(
            File::open(path).map_err(EmbeddingError::from)?,
        )?))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn record_ids(&self) -> &[u64] {
        &self.record_ids
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    fn check_query(&self, query: &EmbeddingVector) -> Result<(), IndexError> {
        if query.dim() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        Ok(())
    }
}

/// Score/id pair ordered by descending goodness: higher score first, then
/// lower record id. Scores are finite by construction so `total_cmp` is a
/// total order.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Hit {
    score: f64,
    record_id: u64,
}

// scores are finite, so the total_cmp ordering is consistent with ==
impl Eq for Hit {}

impl Ord for Hit {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.record_id.cmp(&self.record_id))
    }
}

impl PartialOrd for Hit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dot(row: &[f32], query: &[f32]) -> f64 {
    row.iter()
        .zip(query)
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum()
}

/// Pushes a hit into a min-heap keeping the k best.
fn push_select(heap: &mut BinaryHeap<std::cmp::Reverse<Hit>>, hit: Hit, k: usize) {
    if heap.len() < k {
        heap.push(std::cmp::Reverse(hit));
    } else if let Some(worst) = heap.peek() {
        if hit > worst.0 {
            heap.pop();
            heap.push(std::cmp::Reverse(hit));
        }
    }
}

fn finish(hits: Vec<Hit>) -> Vec<RetrievalResult> {
    let mut hits = hits;
    hits.sort_by(|a, b| b.cmp(a));
    hits.into_iter()
        .enumerate()
        .map(|(rank, hit)| RetrievalResult {
            record_id: hit.record_id,
            score: hit.score,
            rank,
        })
        .collect()
}

/// Exact top-k: scans every row and returns the `min(k, len)` best hits.
///
/// Dispatches to the rayon scan for large indexes when the `parallel`
/// feature is enabled, and to [`top_k_sequential`] otherwise.
pub fn top_k(
    index: &VectorIndex,
    query: &EmbeddingVector,
    k: usize,
) -> Result<Vec<RetrievalResult>, IndexError> {
    #[cfg(feature = "parallel")]
    {
        if index.len() >= PARALLEL_CUTOVER {
            return top_k_parallel(index, query, k);
        }
    }
    top_k_sequential(index, query, k)
}

/// Exact top-k with a single-threaded heap-select scan.
pub fn top_k_sequential(
    index: &VectorIndex,
    query: &EmbeddingVector,
    k: usize,
) -> Result<Vec<RetrievalResult>, IndexError> {
    index.check_query(query)?;
    let q = query.values();
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for (i, &record_id) in index.record_ids.iter().enumerate() {
        let hit = Hit {
            score: dot(index.row(i), q),
            record_id,
        };
        push_select(&mut heap, hit, k);
    }
    Ok(finish(heap.into_iter().map(|r| r.0).collect()))
}

/// Exact top-k with the scan fanned out over rayon. Each worker keeps a
/// local k-select heap; partial results merge into one sorted list, so the
/// output is identical to the sequential scan.
#[cfg(feature = "parallel")]
pub fn top_k_parallel(
    index: &VectorIndex,
    query: &EmbeddingVector,
    k: usize,
) -> Result<Vec<RetrievalResult>, IndexError> {
    use rayon::prelude::*;

    index.check_query(query)?;
    let q = query.values();
    let hits = (0..index.len())
        .into_par_iter()
        .with_min_len(1024)
        .fold(
            || BinaryHeap::with_capacity(k + 1),
            |mut heap, i| {
                let hit = Hit {
                    score: dot(index.row(i), q),
                    record_id: index.record_ids[i],
                };
                push_select(&mut heap, hit, k);
                heap
            },
        )
        .map(|heap| heap.into_iter().map(|r| r.0).collect::<Vec<_>>())
        .reduce(Vec::new, |mut a, mut b| {
            a.append(&mut b);
            a.sort_by(|x, y| y.cmp(x));
            a.truncate(k);
            a
        });
    Ok(finish(hits))
}

/// Reference oracle: computes every score, fully sorts, truncates to k.
/// Kept independent of the heap-select path.
pub fn top_k_bruteforce(
    index: &VectorIndex,
    query: &EmbeddingVector,
    k: usize,
) -> Result<Vec<RetrievalResult>, IndexError> {
    index.check_query(query)?;
    let q = query.values();
    let mut scored: Vec<(f64, u64)> = index
        .record_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let row = index.row(i);
            let mut acc = 0f64;
            for (&a, &b) in row.iter().zip(q) {
                acc += a as f64 * b as f64;
            }
            (acc, id)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(rank, (score, record_id))| RetrievalResult {
            record_id,
            score,
            rank,
        })
        .collect())
}
