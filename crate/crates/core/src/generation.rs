//! End-to-end orchestration: retrieve top-k context, render the prompt,
//! call the client, and fall back to the iterative refine chain when the
//! single-shot prompt would blow the token budget.
//!
//! A refine chain is strictly sequential (each step threads the previous
//! impression), but independent queries run concurrently through
//! [`generate_batch`] with a bounded number of in-flight requests.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusLevel};
use crate::embedding::{EmbeddingError, EmbeddingVector};
use crate::index::{top_k, IndexError, VectorIndex};
use crate::llm::{LlmClient, LlmError, LlmRequest};
use crate::prompting::{
    render_refine, render_zero_shot, PromptError, PromptMode, PromptSpec, TemplateSet,
};

pub use crate::structured::{parse_structured, AttributeTuple, StructuredImpression};

/// How prompt length is estimated against the token budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TokenEstimator {
    /// `ceil(chars / 4)`, a serviceable proxy for BPE token counts.
    #[default]
    CharsDiv4,
    /// Whitespace-separated word count.
    Whitespace,
}

/// Deterministic token count estimate for budget checks.
pub fn estimate_tokens(text: &str, estimator: TokenEstimator) -> usize {
    match estimator {
        TokenEstimator::CharsDiv4 => text.chars().count().div_ceil(4),
        TokenEstimator::Whitespace => text.split_whitespace().count(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    /// Number of records to retrieve.
    pub k: usize,
    pub corpus_level: CorpusLevel,
    pub mode: PromptMode,
    pub model_name: String,
    pub temperature: f64,
    /// Prompt-size budget in estimated tokens; exceeding it triggers the
    /// refine chain (when enabled) or a `ContextOverflow` error.
    pub token_budget: usize,
    pub refine_enabled: bool,
    /// Word limit substituted into the prompt instructions.
    pub maxlen: usize,
    pub max_output_tokens: u32,
    pub estimator: TokenEstimator,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            k: 3,
            corpus_level: CorpusLevel::Sentence,
            mode: PromptMode::Chat,
            model_name: "gpt-4".to_string(),
            temperature: 0.0,
            token_budget: 4096,
            refine_enabled: false,
            maxlen: 50,
            max_output_tokens: 256,
            estimator: TokenEstimator::CharsDiv4,
        }
    }
}

impl GenerationConfig {
    /// Checks the fields that must hold before any generation runs: k and
    /// maxlen positive, temperature non-negative, and a budget that fits at
    /// least the empty-context prompt.
    pub fn validate(&self, templates: &TemplateSet) -> Result<(), GenerationError> {
        if self.k < 1 {
            return Err(GenerationError::BadConfig("k must be >= 1".into()));
        }
        if self.maxlen < 1 {
            return Err(GenerationError::BadConfig("maxlen must be >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GenerationError::BadConfig(
                "temperature must be >= 0".into(),
            ));
        }
        let spec = PromptSpec::zero_shot(self.mode).with_maxlen(self.maxlen);
        let empty = render_zero_shot(templates, &["-"], &spec)?;
        let floor = estimate_tokens(&empty.full_text(), self.estimator);
        if self.token_budget < floor {
            return Err(GenerationError::BadConfig(format!(
                "token_budget {} below empty-context prompt size {}",
                self.token_budget, floor
            )));
        }
        Ok(())
    }
}

/// A generated impression with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Impression {
    pub text: String,
    /// Retrieved record ids in rank order; empty for a standalone refine
    /// chain that was given raw texts instead of retrieval results.
    pub provenance: Vec<u64>,
    /// Retrieval scores aligned with `provenance`.
    pub scores: Vec<f64>,
    pub llm_call_count: usize,
    pub config: GenerationConfig,
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("no context to generate from")]
    EmptyContext,
    #[error("prompt needs ~{needed} tokens but the budget is {budget} and refine is disabled")]
    ContextOverflow { needed: usize, budget: usize },
    #[error("refine call {call_index} of {total} failed: {source}")]
    MidChain {
        call_index: usize,
        total: usize,
        #[source]
        source: LlmError,
    },
    #[error("record {0} not found in corpus")]
    MissingRecord(u64),
    #[error("invalid generation config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Retrieval(#[from] IndexError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

fn request(prompt: crate::prompting::RenderedPrompt, config: &GenerationConfig) -> LlmRequest {
    LlmRequest {
        prompt,
        model: config.model_name.clone(),
        temperature: config.temperature,
        max_output_tokens: config.max_output_tokens,
    }
}

/// Runs the refine recurrence over `texts`: a zero-shot call on the first
/// record, then one refine call per remaining record, threading the
/// previous impression through. Returns the final text and the call count.
fn refine_chain(
    texts: &[&str],
    config: &GenerationConfig,
    client: &dyn LlmClient,
    templates: &TemplateSet,
) -> Result<(String, usize), GenerationError> {
    if texts.is_empty() {
        return Err(GenerationError::EmptyContext);
    }
    let total = texts.len();
    let zero_spec = PromptSpec::zero_shot(config.mode).with_maxlen(config.maxlen);
    let first = render_zero_shot(templates, &texts[..1], &zero_spec)?;
    let mut impression = client
        .complete(&request(first, config))
        .map_err(|source| GenerationError::MidChain {
            call_index: 1,
            total,
            source,
        })?
        .text;
    let refine_spec = PromptSpec::refine(config.mode).with_maxlen(config.maxlen);
    for (i, text) in texts.iter().enumerate().skip(1) {
        let prompt = render_refine(templates, &impression, text, &refine_spec)?;
        impression = client
            .complete(&request(prompt, config))
            .map_err(|source| GenerationError::MidChain {
                call_index: i + 1,
                total,
                source,
            })?
            .text;
    }
    Ok((impression, total))
}

/// Generates one impression for a query embedding.
///
/// Retrieves the top-k records, renders the zero-shot prompt, and issues a
/// single call when it fits the token budget. An oversized prompt runs the
/// refine chain over the retrieved records when `refine_enabled`, and is an
/// error otherwise. The query is normalized first when the index rows are.
pub fn generate(
    query: &EmbeddingVector,
    index: &VectorIndex,
    corpus: &Corpus,
    config: &GenerationConfig,
    client: &dyn LlmClient,
    templates: &TemplateSet,
) -> Result<Impression, GenerationError> {
    if config.k < 1 {
        return Err(GenerationError::BadConfig("k must be >= 1".into()));
    }
    let query = if index.is_normalized() && !query.is_normalized() {
        query.normalize()?
    } else {
        query.clone()
    };
    let results = top_k(index, &query, config.k)?;
    if results.is_empty() {
        return Err(GenerationError::EmptyContext);
    }
    let mut texts = Vec::with_capacity(results.len());
    for hit in &results {
        let record = corpus
            .get(hit.record_id)
            .ok_or(GenerationError::MissingRecord(hit.record_id))?;
        texts.push(record.text.as_str());
    }

    let spec = PromptSpec::zero_shot(config.mode).with_maxlen(config.maxlen);
    let prompt = render_zero_shot(templates, &texts, &spec)?;
    let needed = estimate_tokens(&prompt.full_text(), config.estimator);

    let (text, llm_call_count) = if needed <= config.token_budget {
        let response = client.complete(&request(prompt, config))?;
        (response.text, 1)
    } else if config.refine_enabled {
        refine_chain(&texts, config, client, templates)?
    } else {
        return Err(GenerationError::ContextOverflow {
            needed,
            budget: config.token_budget,
        });
    };

    Ok(Impression {
        text,
        provenance: results.iter().map(|r| r.record_id).collect(),
        scores: results.iter().map(|r| r.score).collect(),
        llm_call_count,
        config: config.clone(),
    })
}

/// Runs the refine recurrence over an explicit list of context texts.
///
/// With one sentence this is exactly the single-shot path: the first call
/// uses the zero-shot prompt. Call count always equals `sentences.len()`.
pub fn refine_generate(
    sentences: &[String],
    config: &GenerationConfig,
    client: &dyn LlmClient,
    templates: &TemplateSet,
) -> Result<Impression, GenerationError> {
    let texts: Vec<&str> = sentences.iter().map(|s| s.as_str()).collect();
    let (text, llm_call_count) = refine_chain(&texts, config, client, templates)?;
    Ok(Impression {
        text,
        provenance: Vec::new(),
        scores: Vec::new(),
        llm_call_count,
        config: config.clone(),
    })
}

/// Generates impressions for many queries, preserving input order.
///
/// At most `max_in_flight` requests run concurrently (a dedicated thread
/// pool under the `parallel` feature; sequential otherwise). Failures are
/// reported per query so a partial batch still yields its successes.
pub fn generate_batch(
    queries: &[EmbeddingVector],
    index: &VectorIndex,
    corpus: &Corpus,
    config: &GenerationConfig,
    client: &dyn LlmClient,
    templates: &TemplateSet,
    max_in_flight: usize,
) -> Vec<Result<Impression, GenerationError>> {
    let max_in_flight = max_in_flight.max(1);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if max_in_flight > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(max_in_flight)
                .build();
            if let Ok(pool) = pool {
                return pool.install(|| {
                    queries
                        .par_iter()
                        .map(|q| generate(q, index, corpus, config, client, templates))
                        .collect()
                });
            }
        }
    }
    queries
        .iter()
        .map(|q| generate(q, index, corpus, config, client, templates))
        .collect()
}
