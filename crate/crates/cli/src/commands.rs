//! Subcommand implementations. Each returns the process exit code:
//! 0 success, 1 partial failure, 2 (via error) configuration/input problems.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use radrag_core::corpus::{dedupe, ingest_reports_from_path, sentence_split, Corpus, CorpusLevel};
use radrag_core::embedding::{EmbeddingSet, EmbeddingVector};
use radrag_core::eval::embedders::{
    HashedBagOfWordsEmbedder, HashedTokenEmbedder, KeywordEntityExtractor, MapEntityExtractor,
    MapReportEmbedder, MapTokenEmbedder, TokenSetExtractor,
};
use radrag_core::eval::sidecar;
use radrag_core::eval::{
    evaluate_run, hallucination_report, write_report_csv, write_report_json, EntityExtractor,
    ReportEmbedder, TokenEmbedder,
};
use radrag_core::generation::{generate_batch, GenerationError, Impression};
use radrag_core::index::{top_k, VectorIndex};
use radrag_core::llm::{
    ConcatenateClient, EchoClient, ExtractiveDedupClient, HttpLlmClient, LlmClient, LlmRequest,
    RetryPolicy,
};
use radrag_core::prompting::{
    render_structured, FewShotExample, PromptSpec, TemplateSet, VocabLists,
};
use radrag_core::structured::parse_structured;

use crate::config::RunConfig;
use crate::io::{read_jsonl, read_texts, write_jsonl, ImpressionRecord};

pub fn cmd_ingest(
    reports: &Path,
    level: CorpusLevel,
    out: &Path,
    keep_duplicates: bool,
) -> Result<i32> {
    let (report_corpus, stats) = ingest_reports_from_path(reports)
        .with_context(|| format!("cannot ingest {}", reports.display()))?;
    let reports_count = report_corpus.len();
    let corpus = match level {
        CorpusLevel::Report => report_corpus,
        CorpusLevel::Sentence => sentence_split(&report_corpus)?,
    };
    let before = corpus.len();
    let corpus = if keep_duplicates {
        corpus
    } else {
        dedupe(&corpus)
    };
    corpus
        .save_to_path(out)
        .with_context(|| format!("cannot write {}", out.display()))?;
    let summary = serde_json::json!({
        "level": level,
        "reports": reports_count,
        "blank_skipped": stats.blank_skipped,
        "records_before_dedupe": before,
        "duplicates_removed": before - corpus.len(),
        "records": corpus.len(),
    });
    println!("{summary}");
    Ok(0)
}

pub fn cmd_embed(
    corpus: Option<&Path>,
    texts: Option<&Path>,
    out: &Path,
    dim: usize,
) -> Result<i32> {
    let rows: Vec<(u64, String)> = match (corpus, texts) {
        (Some(corpus), None) => Corpus::load_from_path(corpus)?
            .records()
            .iter()
            .map(|r| (r.record_id, r.text.clone()))
            .collect(),
        (None, Some(texts)) => read_texts(texts)?,
        _ => bail!("pass exactly one of --corpus or --texts"),
    };
    let embedder = HashedBagOfWordsEmbedder::new(dim);
    let mut ids = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len() * dim);
    for (id, text) in &rows {
        let vector = embedder
            .embed_report(text)
            .map_err(|e| anyhow!("embedding id {id}: {e}"))?;
        ids.push(*id);
        values.extend_from_slice(vector.values());
    }
    let set = EmbeddingSet::new(dim, false, ids, values)?;
    set.write_emb1_to_path(out)?;
    println!(
        "{}",
        serde_json::json!({"records": set.len(), "dim": dim, "out": out})
    );
    Ok(0)
}

pub fn cmd_build_index(
    corpus: &Path,
    embeddings: &Path,
    out: &Path,
    no_normalize: bool,
) -> Result<i32> {
    let corpus = Corpus::load_from_path(corpus)?;
    let set = EmbeddingSet::load(embeddings)?;
    let index = VectorIndex::build(&corpus, &set, !no_normalize)?;
    index.save_to_path(out)?;
    println!(
        "{}",
        serde_json::json!({
            "records": index.len(),
            "dim": index.dim(),
            "normalized": index.is_normalized(),
            "out": out,
        })
    );
    Ok(0)
}

fn query_vectors(
    set: &EmbeddingSet,
    normalized_index: bool,
) -> Result<Vec<(u64, EmbeddingVector)>> {
    let mut out = Vec::with_capacity(set.len());
    for i in 0..set.len() {
        let id = set.record_ids[i];
        let vector =
            EmbeddingVector::new(set.row(i).to_vec()).map_err(|e| anyhow!("query {id}: {e}"))?;
        let vector = if normalized_index {
            vector.normalize().map_err(|e| anyhow!("query {id}: {e}"))?
        } else {
            vector
        };
        out.push((id, vector));
    }
    Ok(out)
}

#[derive(Serialize)]
struct RetrievalHit {
    record_id: u64,
    score: f64,
    rank: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

#[derive(Serialize)]
struct RetrievalLine {
    query_id: u64,
    results: Vec<RetrievalHit>,
}

pub fn cmd_retrieve(
    index: &Path,
    corpus: &Path,
    queries: &Path,
    k: usize,
    out: &Path,
    include_text: bool,
) -> Result<i32> {
    let index = VectorIndex::load_from_path(index)?;
    let corpus = Corpus::load_from_path(corpus)?;
    let queries = EmbeddingSet::load(queries)?;
    let mut lines = Vec::with_capacity(queries.len());
    for (query_id, vector) in query_vectors(&queries, index.is_normalized())? {
        let results = top_k(&index, &vector, k)?;
        let results = results
            .into_iter()
            .map(|r| RetrievalHit {
                record_id: r.record_id,
                score: r.score,
                rank: r.rank,
                text: include_text
                    .then(|| corpus.get(r.record_id).map(|rec| rec.text.clone()))
                    .flatten(),
            })
            .collect();
        lines.push(RetrievalLine { query_id, results });
    }
    write_jsonl(out, &lines)?;
    println!(
        "{}",
        serde_json::json!({"queries": lines.len(), "k": k, "out": out})
    );
    Ok(0)
}

fn build_client(config: &RunConfig) -> Result<Box<dyn LlmClient>> {
    Ok(match config.client.as_str() {
        "stub-echo" => Box::new(EchoClient),
        "stub-concatenate" => Box::new(ConcatenateClient),
        "stub-extractive-dedup" => Box::new(ExtractiveDedupClient),
        "http" => {
            let endpoint = config.endpoint.as_ref().expect("validated");
            let api_key = std::env::var("RADRAG_API_KEY")
                .or_else(|_| std::env::var("OPENAI_API_KEY"))
                .ok();
            let retry = RetryPolicy {
                max_attempts: config.retry_attempts,
                initial_backoff: std::time::Duration::from_millis(config.retry_backoff_ms),
                multiplier: 2.0,
            };
            Box::new(HttpLlmClient::new(endpoint.clone(), api_key)?.with_retry(retry))
        }
        other => bail!("unknown client `{other}`"),
    })
}

fn load_shots(path: &Path, vocab: &VocabLists) -> Result<Vec<FewShotExample>> {
    #[derive(Deserialize)]
    struct RawShot {
        context: String,
        impression: serde_json::Value,
    }
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read shots {}", path.display()))?;
    let shots: Vec<RawShot> = serde_json::from_str(&raw)
        .with_context(|| format!("cannot parse shots {}", path.display()))?;
    if shots.is_empty() {
        bail!("shots file {} is empty", path.display());
    }
    shots
        .into_iter()
        .map(|shot| {
            let json = match shot.impression {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            FewShotExample::new(shot.context, json, vocab).map_err(|e| anyhow!("bad shot: {e}"))
        })
        .collect()
}

fn context_text(corpus: &Corpus, provenance: &[u64]) -> String {
    provenance
        .iter()
        .filter_map(|id| corpus.get(*id).map(|r| r.text.as_str()))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Structured few-shot generation for one query: retrieve, render, one
/// call, parse the JSON reply. Parse problems are recorded on the output
/// record rather than failing the query.
#[allow(clippy::too_many_arguments)]
fn generate_structured(
    query: &EmbeddingVector,
    index: &VectorIndex,
    corpus: &Corpus,
    config: &RunConfig,
    vocab: &VocabLists,
    shots: &[FewShotExample],
    client: &dyn LlmClient,
    templates: &TemplateSet,
) -> Result<Impression, GenerationError> {
    let query = if index.is_normalized() && !query.is_normalized() {
        query.normalize()?
    } else {
        query.clone()
    };
    let results = top_k(index, &query, config.generation.k)?;
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
    let spec = PromptSpec::structured(config.generation.mode).with_maxlen(config.generation.maxlen);
    let prompt = render_structured(templates, &texts, vocab, shots, &spec)?;
    let request = LlmRequest {
        prompt,
        model: config.generation.model_name.clone(),
        temperature: config.generation.temperature,
        max_output_tokens: config.generation.max_output_tokens,
    };
    let response = client.complete(&request)?;
    Ok(Impression {
        text: response.text,
        provenance: results.iter().map(|r| r.record_id).collect(),
        scores: results.iter().map(|r| r.score).collect(),
        llm_call_count: 1,
        config: config.generation.clone(),
    })
}

#[derive(Serialize)]
struct FailureRecord {
    query_id: u64,
    error: String,
}

pub fn cmd_generate(config_path: &Path) -> Result<i32> {
    let config = RunConfig::load(config_path)?;
    let corpus = Corpus::load_from_path(&config.corpus)?;
    let index = match (&config.index, &config.embeddings) {
        (Some(path), None) => VectorIndex::load_from_path(path)?,
        (None, Some(path)) => {
            let set = EmbeddingSet::load(path)?;
            VectorIndex::build(&corpus, &set, config.normalize_embeddings)?
        }
        _ => unreachable!("validated"),
    };
    let templates = match &config.templates_dir {
        Some(dir) => TemplateSet::from_dir(dir)?,
        None => TemplateSet::builtin(),
    };
    config.generation.validate(&templates)?;
    let client = build_client(&config)?;
    let queries = EmbeddingSet::load(&config.queries)?;
    let query_rows = query_vectors(&queries, false)?; // generate normalizes per index

    std::fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("cannot create {}", config.output_dir.display()))?;

    let structured_inputs = if config.structured {
        let vocab_path = config.vocab.as_ref().expect("validated");
        let vocab = VocabLists::from_json(
            &std::fs::read_to_string(vocab_path)
                .with_context(|| format!("cannot read vocab {}", vocab_path.display()))?,
        )
        .map_err(|e| anyhow!("bad vocab: {e}"))?;
        let shots = load_shots(config.shots.as_ref().expect("validated"), &vocab)?;
        Some((vocab, shots))
    } else {
        None
    };

    let vectors: Vec<EmbeddingVector> = query_rows.iter().map(|(_, v)| v.clone()).collect();
    let outcomes: Vec<Result<Impression, GenerationError>> = match &structured_inputs {
        Some((vocab, shots)) => vectors
            .iter()
            .map(|q| {
                generate_structured(
                    q,
                    &index,
                    &corpus,
                    &config,
                    vocab,
                    shots,
                    client.as_ref(),
                    &templates,
                )
            })
            .collect(),
        None => generate_batch(
            &vectors,
            &index,
            &corpus,
            &config.generation,
            client.as_ref(),
            &templates,
            config.max_in_flight,
        ),
    };

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for ((query_id, _), outcome) in query_rows.iter().zip(outcomes) {
        match outcome {
            Ok(impression) => {
                let (attributes, structured_error) = match &structured_inputs {
                    Some((vocab, _)) => match parse_structured(&impression.text, vocab) {
                        Ok(parsed) => (Some(parsed.attributes), None),
                        Err(e) => (None, Some(e.to_string())),
                    },
                    None => (None, None),
                };
                records.push(ImpressionRecord {
                    query_id: *query_id,
                    context: context_text(&corpus, &impression.provenance),
                    impression: impression.text,
                    provenance: impression.provenance,
                    scores: impression.scores,
                    llm_calls: impression.llm_call_count,
                    attributes,
                    structured_error,
                });
            }
            Err(err) => failures.push(FailureRecord {
                query_id: *query_id,
                error: err.to_string(),
            }),
        }
    }

    let impressions_path = config.output_dir.join("impressions.jsonl");
    write_jsonl(&impressions_path, &records)?;

    let provenance: Vec<serde_json::Value> = records
        .iter()
        .map(|r| serde_json::json!({"query_id": r.query_id, "provenance": r.provenance}))
        .collect();
    let manifest = serde_json::json!({
        "created_unix_secs": SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        "tool_version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "config_hash": config.hash(),
        "template_version": templates.version(),
        "client": client.name(),
        "corpus_records": corpus.len(),
        "queries": query_rows.len(),
        "impressions_written": records.len(),
        "provenance": provenance,
        "failures": failures,
    });
    std::fs::write(
        config.output_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;

    println!(
        "{}",
        serde_json::json!({
            "impressions": records.len(),
            "failures": manifest["failures"].as_array().map(|a| a.len()).unwrap_or(0),
            "out": impressions_path,
        })
    );
    Ok(
        if manifest["failures"]
            .as_array()
            .is_some_and(|a| !a.is_empty())
        {
            1
        } else {
            0
        },
    )
}

/// Sidecar file paths for `evaluate`; groups must be complete or absent.
#[derive(Debug, Default, clap::Args)]
pub struct SidecarArgs {
    /// Report embeddings for prediction texts, keyed by query id.
    #[arg(long)]
    pub pred_report_emb: Option<PathBuf>,
    /// Report embeddings for reference texts.
    #[arg(long)]
    pub ref_report_emb: Option<PathBuf>,
    /// Report embeddings for context texts (needed with contexts).
    #[arg(long)]
    pub ctx_report_emb: Option<PathBuf>,
    /// Token embeddings for prediction texts (one row per token).
    #[arg(long)]
    pub pred_token_emb: Option<PathBuf>,
    /// Token embeddings for reference texts.
    #[arg(long)]
    pub ref_token_emb: Option<PathBuf>,
    /// Entity sets for prediction texts (JSON object id -> [terms]).
    #[arg(long)]
    pub pred_entities: Option<PathBuf>,
    /// Entity sets for reference texts.
    #[arg(long)]
    pub ref_entities: Option<PathBuf>,
}

fn load_embedding_sidecar(path: &Path) -> Result<EmbeddingSet> {
    if !path.exists() {
        bail!("sidecar file does not exist: {}", path.display());
    }
    EmbeddingSet::load(path).with_context(|| format!("bad sidecar {}", path.display()))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_evaluate(
    predictions: &Path,
    references: &Path,
    contexts: Option<&Path>,
    sidecars: &SidecarArgs,
    entity_vocab: Option<&Path>,
    threshold: f64,
    dim: usize,
    out_json: Option<&Path>,
    out_csv: Option<&Path>,
) -> Result<i32> {
    let impressions: Vec<ImpressionRecord> = read_jsonl(predictions)?;
    let preds: Vec<(u64, String)> = impressions
        .iter()
        .map(|r| (r.query_id, r.impression.clone()))
        .collect();
    let refs = read_texts(references)?;
    let ctxs: Vec<(u64, String)> = match contexts {
        Some(path) => read_texts(path)?,
        None => {
            let from_records: Vec<(u64, String)> = impressions
                .iter()
                .filter(|r| !r.context.is_empty())
                .map(|r| (r.query_id, r.context.clone()))
                .collect();
            if from_records.len() == impressions.len() {
                from_records
            } else {
                Vec::new()
            }
        }
    };

    // report embedder
    let report_sidecars = [
        &sidecars.pred_report_emb,
        &sidecars.ref_report_emb,
        &sidecars.ctx_report_emb,
    ];
    let report_embedder: Box<dyn ReportEmbedder> = if report_sidecars.iter().any(|s| s.is_some()) {
        let pred_path = sidecars
            .pred_report_emb
            .as_ref()
            .ok_or_else(|| anyhow!("--pred-report-emb is required with report sidecars"))?;
        let ref_path = sidecars
            .ref_report_emb
            .as_ref()
            .ok_or_else(|| anyhow!("--ref-report-emb is required with report sidecars"))?;
        let mut embedder = MapReportEmbedder::default();
        sidecar::extend_report_embedder(
            &mut embedder,
            &preds,
            &load_embedding_sidecar(pred_path)?,
            "predictions",
        )?;
        sidecar::extend_report_embedder(
            &mut embedder,
            &refs,
            &load_embedding_sidecar(ref_path)?,
            "references",
        )?;
        if !ctxs.is_empty() {
            let ctx_path = sidecars.ctx_report_emb.as_ref().ok_or_else(|| {
                anyhow!("--ctx-report-emb is required when contexts are evaluated with sidecars")
            })?;
            sidecar::extend_report_embedder(
                &mut embedder,
                &ctxs,
                &load_embedding_sidecar(ctx_path)?,
                "contexts",
            )?;
        }
        Box::new(embedder)
    } else {
        Box::new(HashedBagOfWordsEmbedder::new(dim))
    };

    // token embedder
    let token_embedder: Box<dyn TokenEmbedder> =
        match (&sidecars.pred_token_emb, &sidecars.ref_token_emb) {
            (Some(pred_path), Some(ref_path)) => {
                let mut embedder = MapTokenEmbedder::default();
                sidecar::extend_token_embedder(
                    &mut embedder,
                    &preds,
                    &load_embedding_sidecar(pred_path)?,
                    "predictions",
                )?;
                sidecar::extend_token_embedder(
                    &mut embedder,
                    &refs,
                    &load_embedding_sidecar(ref_path)?,
                    "references",
                )?;
                Box::new(embedder)
            }
            (None, None) => Box::new(HashedTokenEmbedder::new(dim)),
            _ => bail!("token sidecars need both --pred-token-emb and --ref-token-emb"),
        };

    // entity extractor
    let extractor: Box<dyn EntityExtractor> =
        match (&sidecars.pred_entities, &sidecars.ref_entities) {
            (Some(pred_path), Some(ref_path)) => {
                if !pred_path.exists() {
                    bail!("sidecar file does not exist: {}", pred_path.display());
                }
                if !ref_path.exists() {
                    bail!("sidecar file does not exist: {}", ref_path.display());
                }
                let mut extractor = MapEntityExtractor::default();
                sidecar::extend_extractor(
                    &mut extractor,
                    &preds,
                    &sidecar::load_entities(pred_path)?,
                    "predictions",
                )?;
                sidecar::extend_extractor(
                    &mut extractor,
                    &refs,
                    &sidecar::load_entities(ref_path)?,
                    "references",
                )?;
                Box::new(extractor)
            }
            (None, None) => match entity_vocab {
                Some(path) => {
                    let raw = std::fs::read_to_string(path)
                        .with_context(|| format!("cannot read {}", path.display()))?;
                    let terms: Vec<String> = serde_json::from_str(&raw)
                        .with_context(|| format!("cannot parse {}", path.display()))?;
                    Box::new(KeywordEntityExtractor::new(terms))
                }
                None => Box::new(TokenSetExtractor),
            },
            _ => bail!("entity sidecars need both --pred-entities and --ref-entities"),
        };

    let report = evaluate_run(
        &preds,
        &refs,
        &ctxs,
        token_embedder.as_ref(),
        report_embedder.as_ref(),
        extractor.as_ref(),
        threshold,
    )?;

    match out_json {
        Some(path) => {
            let file = std::fs::File::create(path)
                .with_context(|| format!("cannot create {}", path.display()))?;
            write_report_json(&report, file)?;
            println!("{}", serde_json::to_string(&report.aggregate)?);
        }
        None => write_report_json(&report, std::io::stdout().lock())?,
    }
    if let Some(path) = out_csv {
        let file = std::fs::File::create(path)
            .with_context(|| format!("cannot create {}", path.display()))?;
        write_report_csv(&report, file)?;
    }
    Ok(0)
}

pub fn cmd_hallucinate(
    generations: &Path,
    contexts: Option<&Path>,
    threshold: f64,
    dim: usize,
    out: Option<&Path>,
) -> Result<i32> {
    let impressions: Vec<ImpressionRecord> = read_jsonl(generations)?;
    if impressions.is_empty() {
        bail!("no generations in {}", generations.display());
    }
    let context_by_id: BTreeMap<u64, String> = match contexts {
        Some(path) => read_texts(path)?.into_iter().collect(),
        None => impressions
            .iter()
            .map(|r| (r.query_id, r.context.clone()))
            .collect(),
    };
    let mut ids = Vec::with_capacity(impressions.len());
    let mut records = Vec::with_capacity(impressions.len());
    for rec in &impressions {
        let context = context_by_id
            .get(&rec.query_id)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| anyhow!("no context for query {}", rec.query_id))?;
        ids.push(rec.query_id);
        records.push((rec.impression.clone(), context.clone()));
    }
    let embedder = HashedBagOfWordsEmbedder::new(dim);
    let report = hallucination_report(&records, &embedder, threshold)?;
    let per_record: Vec<serde_json::Value> = ids
        .iter()
        .zip(&report.scores)
        .map(|(id, score)| serde_json::json!({"query_id": id, "s_emb": score}))
        .collect();
    let output = serde_json::json!({
        "threshold": report.threshold,
        "mean": report.mean,
        "fraction_above": report.fraction_above,
        "records": per_record,
    });
    let rendered = serde_json::to_string_pretty(&output)? + "\n";
    match out {
        Some(path) => std::fs::write(path, rendered)
            .with_context(|| format!("cannot write {}", path.display()))?,
        None => print!("{rendered}"),
    }
    Ok(0)
}
