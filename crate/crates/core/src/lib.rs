//! Retrieval-augmented generation engine for radiology report impressions.
//!
//! The pipeline stages, in dependency order:
//!
//! - [`corpus`]: ingest line-delimited impression reports into report-level
//!   and sentence-level corpora, with deduplication and JSONL persistence.
//! - [`embedding`]: dense embedding vectors and the on-disk embedding
//!   formats (binary `EMB1` and a JSON-lines alternate).
//! - [`index`]: exact top-k dot-product retrieval over an immutable
//!   embedding matrix, with a brute-force oracle for equivalence testing.
//! - [`prompting`]: byte-stable prompt rendering from external template
//!   assets: zero-shot (completion and chat), structured few-shot, refine.
//! - [`llm`]: the OpenAI-compatible HTTP client with retry/backoff, plus
//!   deterministic stub clients and a scripted mock server for hermetic tests.
//! - [`generation`]: orchestration: retrieve, render, call, and the
//!   iterative refine chain for contexts beyond the token budget; structured
//!   JSON output parsing and vocabulary validation.
//! - [`eval`]: greedy token-matching score, report-embedding cosine
//!   similarity, entity-overlap F1, and hallucination scoring against
//!   retrieved context.
//!
//! Compiled with the `parallel` feature (default), retrieval scans and batch
//! evaluation fan out over a rayon pool; without it every code path is
//! single-threaded. Sequential variants (`top_k_sequential`,
//! `evaluate_run_sequential`) are always available for comparison.

pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod generation;
pub mod index;
pub mod llm;
pub mod prompting;
pub mod structured;

mod util;

pub use corpus::{Corpus, CorpusError, CorpusLevel, CorpusRecord};
pub use embedding::{EmbeddingError, EmbeddingSet, EmbeddingVector};
pub use index::{IndexError, RetrievalResult, VectorIndex};
pub use prompting::{
    FewShotExample, PromptError, PromptMode, PromptSpec, RenderedPrompt, TemplateSet, VocabLists,
};
pub use structured::{AttributeTuple, StructuredImpression};
