//! Evaluation metrics over pluggable embedders and extractors.
//!
//! Three record-level metrics: greedy token-matching precision/recall/F1
//! over contextual token embeddings, report-level embedding cosine
//! similarity (`s_emb`), and entity-overlap F1. The hallucination score is
//! `s_emb` between a generation and its retrieved context, aggregated into
//! a mean and the fraction above a threshold.
//!
//! Real clinical embedders run out of process; their outputs enter through
//! the sidecar loaders in [`sidecar`]. The [`embedders`] module ships
//! deterministic hash-based implementations for hermetic runs.

pub mod embedders;
pub mod sidecar;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::embedding::EmbeddingVector;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("vector has zero norm")]
    DegenerateVector,
    #[error("dimension mismatch: {expected} vs {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("text produced no tokens")]
    EmptyText,
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("threshold {0} outside [-1, 1]")]
    InvalidThreshold(f64),
    #[error("prediction/reference ids misaligned: {0}")]
    AlignmentError(String),
    #[error("no sidecar data for text: {0:?}")]
    MissingSidecar(String),
    #[error("inconsistent sidecar: {0}")]
    InconsistentSidecar(String),
}

/// Per-token contextual embeddings, one vector per token.
pub trait TokenEmbedder: Send + Sync {
    fn embed_tokens(&self, text: &str) -> Result<Vec<EmbeddingVector>, EvalError>;
}

/// One embedding for a whole report text.
pub trait ReportEmbedder: Send + Sync {
    fn embed_report(&self, text: &str) -> Result<EmbeddingVector, EvalError>;
}

/// Normalized clinical entity strings found in a text.
pub trait EntityExtractor: Send + Sync {
    fn extract(&self, text: &str) -> Result<BTreeSet<String>, EvalError>;
}

/// Cosine similarity with f64 accumulation. Errors on zero vectors.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EvalError> {
    if a.dim() != b.dim() {
        return Err(EvalError::DimMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let mut dot = 0f64;
    let mut na = 0f64;
    let mut nb = 0f64;
    for (&x, &y) in a.values().iter().zip(b.values()) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EvalError::DegenerateVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Greedy token-matching scores: precision, recall, and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BertScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Token-level similarity between prediction and reference.
///
/// Precision is the mean over predicted tokens of the best cosine against
/// any reference token; recall is the mirror image; F1 their harmonic mean.
/// No IDF weighting and no baseline rescaling.
pub fn bertscore(
    pred_text: &str,
    ref_text: &str,
    embedder: &dyn TokenEmbedder,
) -> Result<BertScore, EvalError> {
    let pred = embedder.embed_tokens(pred_text)?;
    let reference = embedder.embed_tokens(ref_text)?;
    if pred.is_empty() || reference.is_empty() {
        return Err(EvalError::EmptyText);
    }
    let mut sims = vec![0f64; pred.len() * reference.len()];
    for (i, p) in pred.iter().enumerate() {
        for (j, r) in reference.iter().enumerate() {
            sims[i * reference.len() + j] = cosine(p, r)?;
        }
    }
    let precision = (0..pred.len())
        .map(|i| {
            sims[i * reference.len()..(i + 1) * reference.len()]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
        / pred.len() as f64;
    let recall = (0..reference.len())
        .map(|j| {
            (0..pred.len())
                .map(|i| sims[i * reference.len() + j])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
        / reference.len() as f64;
    Ok(BertScore {
        precision,
        recall,
        f1: harmonic(precision, recall),
    })
}

/// Report-level semantic similarity: cosine of the two report embeddings.
pub fn s_emb(
    pred_text: &str,
    ref_text: &str,
    embedder: &dyn ReportEmbedder,
) -> Result<f64, EvalError> {
    cosine(
        &embedder.embed_report(pred_text)?,
        &embedder.embed_report(ref_text)?,
    )
}

/// Set-overlap F1 between extracted entities. Two empty sets count as
/// perfect agreement (1.0); exactly one empty set scores 0.0.
pub fn entity_f1(pred: &BTreeSet<String>, reference: &BTreeSet<String>) -> f64 {
    match (pred.is_empty(), reference.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        (false, false) => {
            let overlap = pred.intersection(reference).count() as f64;
            let p = overlap / pred.len() as f64;
            let r = overlap / reference.len() as f64;
            harmonic(p, r)
        }
    }
}

/// Hallucination scores of a run: per-record `s_emb(generation, context)`
/// plus the mean and the fraction strictly above the threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HallucinationReport {
    pub threshold: f64,
    pub scores: Vec<f64>,
    pub mean: f64,
    pub fraction_above: f64,
}

/// Scores each (generation, context) pair and aggregates.
pub fn hallucination_report(
    records: &[(String, String)],
    embedder: &dyn ReportEmbedder,
    threshold: f64,
) -> Result<HallucinationReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(EvalError::InvalidThreshold(threshold));
    }
    let scores: Result<Vec<f64>, EvalError> = records
        .iter()
        .map(|(generation, context)| s_emb(generation, context, embedder))
        .collect();
    let scores = scores?;
    Ok(aggregate_hallucination(scores, threshold))
}

fn aggregate_hallucination(scores: Vec<f64>, threshold: f64) -> HallucinationReport {
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let above = scores.iter().filter(|&&s| s > threshold).count();
    HallucinationReport {
        threshold,
        fraction_above: above as f64 / scores.len() as f64,
        mean,
        scores,
    }
}

/// All record-level metrics for one prediction/reference pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalScores {
    pub bertscore_precision: f64,
    pub bertscore_recall: f64,
    pub bertscore_f1: f64,
    pub s_emb: f64,
    pub entity_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordScores {
    pub id: u64,
    #[serde(flatten)]
    pub scores: EvalScores,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hallucination_s_emb: Option<f64>,
}

/// Arithmetic means over all records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunAggregate {
    pub bertscore_precision: f64,
    pub bertscore_recall: f64,
    pub bertscore_f1: f64,
    pub s_emb: f64,
    pub entity_f1: f64,
}

/// Per-record metrics and aggregates for a full run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub records: Vec<RecordScores>,
    pub aggregate: RunAggregate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hallucination: Option<HallucinationReport>,
}

/// One aligned record: id, prediction, reference, optional context.
type AlignedRecord<'a> = (u64, &'a str, &'a str, Option<&'a str>);

fn align<'a>(
    predictions: &'a [(u64, String)],
    references: &'a [(u64, String)],
    contexts: &'a [(u64, String)],
) -> Result<Vec<AlignedRecord<'a>>, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let to_map =
        |items: &'a [(u64, String)], what: &str| -> Result<BTreeMap<u64, &'a str>, EvalError> {
            let mut map = BTreeMap::new();
            for (id, text) in items {
                if map.insert(*id, text.as_str()).is_some() {
                    return Err(EvalError::AlignmentError(format!(
                        "duplicate {what} id {id}"
                    )));
                }
            }
            Ok(map)
        };
    let preds = to_map(predictions, "prediction")?;
    let refs = to_map(references, "reference")?;
    let ctxs = to_map(contexts, "context")?;

    let pred_ids: BTreeSet<u64> = preds.keys().copied().collect();
    let ref_ids: BTreeSet<u64> = refs.keys().copied().collect();
    if pred_ids != ref_ids {
        let missing: Vec<u64> = pred_ids.difference(&ref_ids).copied().collect();
        let extra: Vec<u64> = ref_ids.difference(&pred_ids).copied().collect();
        return Err(EvalError::AlignmentError(format!(
            "ids without references: {missing:?}; references without predictions: {extra:?}"
        )));
    }
    if !ctxs.is_empty() {
        let ctx_ids: BTreeSet<u64> = ctxs.keys().copied().collect();
        if ctx_ids != pred_ids {
            return Err(EvalError::AlignmentError(
                "context ids do not match prediction ids".into(),
            ));
        }
    }

    Ok(preds
        .iter()
        .map(|(&id, &pred)| (id, pred, refs[&id], ctxs.get(&id).copied()))
        .collect())
}

fn score_one(
    id: u64,
    pred: &str,
    reference: &str,
    context: Option<&str>,
    token_embedder: &dyn TokenEmbedder,
    report_embedder: &dyn ReportEmbedder,
    extractor: &dyn EntityExtractor,
) -> Result<RecordScores, EvalError> {
    let bs = bertscore(pred, reference, token_embedder)?;
    let semantic = s_emb(pred, reference, report_embedder)?;
    let entities = entity_f1(&extractor.extract(pred)?, &extractor.extract(reference)?);
    let hallucination_s_emb = match context {
        Some(ctx) => Some(s_emb(pred, ctx, report_embedder)?),
        None => None,
    };
    Ok(RecordScores {
        id,
        scores: EvalScores {
            bertscore_precision: bs.precision,
            bertscore_recall: bs.recall,
            bertscore_f1: bs.f1,
            s_emb: semantic,
            entity_f1: entities,
        },
        hallucination_s_emb,
    })
}

fn finish_report(records: Vec<RecordScores>, threshold: f64) -> RunReport {
    let n = records.len() as f64;
    let aggregate = RunAggregate {
        bertscore_precision: records
            .iter()
            .map(|r| r.scores.bertscore_precision)
            .sum::<f64>()
            / n,
        bertscore_recall: records
            .iter()
            .map(|r| r.scores.bertscore_recall)
            .sum::<f64>()
            / n,
        bertscore_f1: records.iter().map(|r| r.scores.bertscore_f1).sum::<f64>() / n,
        s_emb: records.iter().map(|r| r.scores.s_emb).sum::<f64>() / n,
        entity_f1: records.iter().map(|r| r.scores.entity_f1).sum::<f64>() / n,
    };
    let hall_scores: Vec<f64> = records
        .iter()
        .filter_map(|r| r.hallucination_s_emb)
        .collect();
    let hallucination = if hall_scores.len() == records.len() {
        Some(aggregate_hallucination(hall_scores, threshold))
    } else {
        None
    };
    RunReport {
        records,
        aggregate,
        hallucination,
    }
}

/// Evaluates a whole run: every record-level metric, arithmetic means, and
/// (when contexts are supplied) the hallucination block.
///
/// Inputs align by id; mismatched id sets are an error. Records are scored
/// with the same functions as the single-record operations, in parallel
/// under the `parallel` feature.
pub fn evaluate_run(
    predictions: &[(u64, String)],
    references: &[(u64, String)],
    contexts: &[(u64, String)],
    token_embedder: &dyn TokenEmbedder,
    report_embedder: &dyn ReportEmbedder,
    extractor: &dyn EntityExtractor,
    threshold: f64,
) -> Result<RunReport, EvalError> {
    let aligned = align(predictions, references, contexts)?;
    #[cfg(feature = "parallel")]
    let scored: Result<Vec<RecordScores>, EvalError> = {
        use rayon::prelude::*;
        aligned
            .par_iter()
            .map(|(id, pred, reference, context)| {
                score_one(
                    *id,
                    pred,
                    reference,
                    *context,
                    token_embedder,
                    report_embedder,
                    extractor,
                )
            })
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let scored: Result<Vec<RecordScores>, EvalError> = aligned
        .iter()
        .map(|(id, pred, reference, context)| {
            score_one(
                *id,
                pred,
                reference,
                *context,
                token_embedder,
                report_embedder,
                extractor,
            )
        })
        .collect();
    Ok(finish_report(scored?, threshold))
}

/// Single-threaded [`evaluate_run`], kept for comparison and debugging.
pub fn evaluate_run_sequential(
    predictions: &[(u64, String)],
    references: &[(u64, String)],
    contexts: &[(u64, String)],
    token_embedder: &dyn TokenEmbedder,
    report_embedder: &dyn ReportEmbedder,
    extractor: &dyn EntityExtractor,
    threshold: f64,
) -> Result<RunReport, EvalError> {
    let aligned = align(predictions, references, contexts)?;
    let scored: Result<Vec<RecordScores>, EvalError> = aligned
        .iter()
        .map(|(id, pred, reference, context)| {
            score_one(
                *id,
                pred,
                reference,
                *context,
                token_embedder,
                report_embedder,
                extractor,
            )
        })
        .collect();
    Ok(finish_report(scored?, threshold))
}

/// Writes the report as pretty JSON.
pub fn write_report_json<W: Write>(report: &RunReport, mut writer: W) -> std::io::Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    writer.write_all(json.as_bytes())?;
    writer.write_all(b"\n")
}

/// Writes one CSV row per record, aligned with the JSON report.
pub fn write_report_csv<W: Write>(report: &RunReport, mut writer: W) -> std::io::Result<()> {
    writeln!(
        writer,
        "record_id,bertscore_precision,bertscore_recall,bertscore_f1,s_emb,entity_f1,hallucination_s_emb"
    )?;
    for rec in &report.records {
        let hall = rec
            .hallucination_s_emb
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        writeln!(
            writer,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            rec.id,
            rec.scores.bertscore_precision,
            rec.scores.bertscore_recall,
            rec.scores.bertscore_f1,
            rec.scores.s_emb,
            rec.scores.entity_f1,
            hall
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::embedders::{HashedBagOfWordsEmbedder, HashedTokenEmbedder, TokenSetExtractor};
    use super::embedders::{MapReportEmbedder, MapTokenEmbedder};
    use super::*;

    fn vec2(x: f32, y: f32) -> EmbeddingVector {
        EmbeddingVector::new(vec![x, y]).unwrap()
    }

    #[test]
    #[allow(clippy::approx_constant)] // 0.70710678 is the pinned fixture value
    fn cosine_examples() {
        let v = vec2(0.3, 0.7);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine(&vec2(1.0, 0.0), &vec2(0.0, 1.0)).unwrap()).abs() < 1e-12);
        let c = cosine(&vec2(1.0, 1.0), &vec2(1.0, 0.0)).unwrap();
        assert!((c - 0.70710678).abs() < 1e-6);
    }

    #[test]
    fn cosine_zero_vector_fails() {
        assert!(matches!(
            cosine(&vec2(0.0, 0.0), &vec2(1.0, 0.0)).unwrap_err(),
            EvalError::DegenerateVector
        ));
    }

    #[test]
    fn bertscore_identical_texts() {
        let embedder = HashedTokenEmbedder::new(512);
        let text = "mild bibasilar atelectasis is present";
        let score = bertscore(text, text, &embedder).unwrap();
        assert!((score.precision - 1.0).abs() < 1e-9);
        assert!((score.recall - 1.0).abs() < 1e-9);
        assert!((score.f1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bertscore_hand_case() {
        // pred has one token embedding e1; ref has e1 and an orthogonal e2
        let e1 = vec2(1.0, 0.0);
        let e2 = vec2(0.0, 1.0);
        let embedder = MapTokenEmbedder::from_pairs(vec![
            ("pred".into(), vec![e1.clone()]),
            ("ref".into(), vec![e1, e2]),
        ]);
        let score = bertscore("pred", "ref", &embedder).unwrap();
        assert!((score.precision - 1.0).abs() < 1e-12);
        assert!((score.recall - 0.5).abs() < 1e-12);
        assert!((score.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bertscore_orthogonal_tokens_score_zero() {
        let embedder = MapTokenEmbedder::from_pairs(vec![
            ("a".into(), vec![vec2(1.0, 0.0)]),
            ("b".into(), vec![vec2(0.0, 1.0)]),
        ]);
        let score = bertscore("a", "b", &embedder).unwrap();
        assert_eq!(score.precision, 0.0);
        assert_eq!(score.recall, 0.0);
        assert_eq!(score.f1, 0.0);
    }

    #[test]
    fn bertscore_empty_text_rejected() {
        let embedder = HashedTokenEmbedder::new(64);
        assert!(matches!(
            bertscore("", "some text", &embedder).unwrap_err(),
            EvalError::EmptyText
        ));
    }

    #[test]
    fn bertscore_swap_symmetry() {
        let embedder = HashedTokenEmbedder::new(512);
        let a = "low lung volumes with bibasilar opacities";
        let b = "bibasilar opacities may represent atelectasis";
        let ab = bertscore(a, b, &embedder).unwrap();
        let ba = bertscore(b, a, &embedder).unwrap();
        assert!((ab.precision - ba.recall).abs() < 1e-12);
        assert!((ab.recall - ba.precision).abs() < 1e-12);
        assert!((ab.f1 - ba.f1).abs() < 1e-12);
    }

    #[test]
    fn s_emb_identity_and_hand_case() {
        let embedder = HashedBagOfWordsEmbedder::new(1024);
        assert!((s_emb("mild edema", "mild edema", &embedder).unwrap() - 1.0).abs() < 1e-9);

        // distinct hash buckets make the bag-of-words cosine exact:
        // {mild:1, edema:1} vs {mild:1, edema:1, present:1} -> 2/sqrt(2*3)
        let tokens = ["mild", "edema", "present"];
        let buckets: BTreeSet<u64> = tokens
            .iter()
            .map(|t| crate::util::fnv1a64(t.as_bytes()) % 1024)
            .collect();
        assert_eq!(
            buckets.len(),
            3,
            "hash collision would invalidate the oracle"
        );
        let got = s_emb("mild edema", "mild edema present", &embedder).unwrap();
        let expected = 2.0 / (2.0f64.sqrt() * 3.0f64.sqrt());
        assert!((got - expected).abs() < 1e-9);
    }

    #[test]
    fn s_emb_orthogonal_construction() {
        let embedder = MapReportEmbedder::from_pairs(vec![
            ("a".into(), vec2(1.0, 0.0)),
            ("b".into(), vec2(0.0, 1.0)),
        ]);
        assert!((s_emb("a", "b", &embedder).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn entity_f1_cases() {
        let set =
            |items: &[&str]| -> BTreeSet<String> { items.iter().map(|s| s.to_string()).collect() };
        let a = set(&["atelectasis", "effusion", "edema"]);
        assert_eq!(entity_f1(&a, &a), 1.0);
        let b = set(&["effusion", "edema", "pneumonia"]);
        assert!((entity_f1(&a, &b) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(entity_f1(&a, &set(&["mass"])), 0.0);
        assert_eq!(entity_f1(&set(&[]), &set(&[])), 1.0);
        assert_eq!(entity_f1(&a, &set(&[])), 0.0);
        // symmetry
        assert_eq!(entity_f1(&a, &b), entity_f1(&b, &a));
    }

    #[test]
    fn hallucination_identity() {
        let embedder = HashedBagOfWordsEmbedder::new(256);
        let records = vec![
            ("mild edema".to_string(), "mild edema".to_string()),
            ("clear lungs".to_string(), "clear lungs".to_string()),
        ];
        let report = hallucination_report(&records, &embedder, 0.70).unwrap();
        assert!((report.mean - 1.0).abs() < 1e-9);
        assert_eq!(report.fraction_above, 1.0);
    }

    #[test]
    fn hallucination_hand_aggregation() {
        // texts mapped to unit vectors at chosen angles so the cosines are
        // exactly 0.9, 0.6, 0.8 against the shared context vector (1, 0)
        let ctx = vec2(1.0, 0.0);
        let at = |c: f64| vec2(c as f32, (1.0 - c * c).sqrt() as f32);
        let embedder = MapReportEmbedder::from_pairs(vec![
            ("ctx".into(), ctx),
            ("g1".into(), at(0.9)),
            ("g2".into(), at(0.6)),
            ("g3".into(), at(0.8)),
        ]);
        let records = vec![
            ("g1".to_string(), "ctx".to_string()),
            ("g2".to_string(), "ctx".to_string()),
            ("g3".to_string(), "ctx".to_string()),
        ];
        let report = hallucination_report(&records, &embedder, 0.70).unwrap();
        assert!((report.mean - 0.76667).abs() < 1e-4);
        assert!((report.fraction_above - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn hallucination_rejects_empty_and_bad_threshold() {
        let embedder = HashedBagOfWordsEmbedder::new(64);
        assert!(matches!(
            hallucination_report(&[], &embedder, 0.7).unwrap_err(),
            EvalError::EmptyEvaluation
        ));
        let records = vec![("a".to_string(), "a".to_string())];
        assert!(matches!(
            hallucination_report(&records, &embedder, 1.5).unwrap_err(),
            EvalError::InvalidThreshold(_)
        ));
    }

    fn pairs(items: &[(u64, &str)]) -> Vec<(u64, String)> {
        items.iter().map(|(id, t)| (*id, t.to_string())).collect()
    }

    #[test]
    fn evaluate_run_identity_is_all_ones() {
        let token = HashedTokenEmbedder::new(256);
        let report_emb = HashedBagOfWordsEmbedder::new(256);
        let extractor = TokenSetExtractor;
        let preds = pairs(&[(0, "mild edema present")]);
        let report = evaluate_run(
            &preds,
            &preds.clone(),
            &[],
            &token,
            &report_emb,
            &extractor,
            0.70,
        )
        .unwrap();
        let agg = report.aggregate;
        for value in [
            agg.bertscore_precision,
            agg.bertscore_recall,
            agg.bertscore_f1,
            agg.s_emb,
            agg.entity_f1,
        ] {
            assert!((value - 1.0).abs() < 1e-9, "expected 1.0, got {value}");
        }
        assert!(report.hallucination.is_none());
    }

    #[test]
    fn evaluate_run_matches_individual_ops_and_means() {
        let token = HashedTokenEmbedder::new(512);
        let report_emb = HashedBagOfWordsEmbedder::new(512);
        let extractor = TokenSetExtractor;
        let preds = pairs(&[(0, "mild edema"), (1, "left effusion seen")]);
        let refs = pairs(&[(0, "mild edema present"), (1, "small left effusion")]);
        let ctxs = pairs(&[(0, "mild edema"), (1, "left effusion seen today")]);
        let report =
            evaluate_run(&preds, &refs, &ctxs, &token, &report_emb, &extractor, 0.70).unwrap();

        for (i, rec) in report.records.iter().enumerate() {
            let bs = bertscore(&preds[i].1, &refs[i].1, &token).unwrap();
            assert_eq!(rec.scores.bertscore_precision, bs.precision);
            assert_eq!(rec.scores.bertscore_recall, bs.recall);
            assert_eq!(rec.scores.bertscore_f1, bs.f1);
            let se = s_emb(&preds[i].1, &refs[i].1, &report_emb).unwrap();
            assert_eq!(rec.scores.s_emb, se);
            let ef = entity_f1(
                &extractor.extract(&preds[i].1).unwrap(),
                &extractor.extract(&refs[i].1).unwrap(),
            );
            assert_eq!(rec.scores.entity_f1, ef);
            let hall = s_emb(&preds[i].1, &ctxs[i].1, &report_emb).unwrap();
            assert_eq!(rec.hallucination_s_emb, Some(hall));
        }
        let mean_f1 = report
            .records
            .iter()
            .map(|r| r.scores.bertscore_f1)
            .sum::<f64>()
            / 2.0;
        assert!((report.aggregate.bertscore_f1 - mean_f1).abs() < 1e-15);
        assert!(report.hallucination.is_some());
    }

    #[test]
    fn evaluate_run_parallel_equals_sequential() {
        let token = HashedTokenEmbedder::new(256);
        let report_emb = HashedBagOfWordsEmbedder::new(256);
        let extractor = TokenSetExtractor;
        let preds: Vec<(u64, String)> = (0..50)
            .map(|i| (i, format!("finding number {i} with edema")))
            .collect();
        let refs: Vec<(u64, String)> = (0..50)
            .map(|i| (i, format!("finding number {i} with effusion")))
            .collect();
        let a = evaluate_run(&preds, &refs, &[], &token, &report_emb, &extractor, 0.7).unwrap();
        let b = evaluate_run_sequential(&preds, &refs, &[], &token, &report_emb, &extractor, 0.7)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn evaluate_run_rejects_misaligned_ids() {
        let token = HashedTokenEmbedder::new(64);
        let report_emb = HashedBagOfWordsEmbedder::new(64);
        let err = evaluate_run(
            &pairs(&[(0, "a"), (1, "b")]),
            &pairs(&[(0, "a"), (2, "b")]),
            &[],
            &token,
            &report_emb,
            &TokenSetExtractor,
            0.7,
        )
        .unwrap_err();
        match err {
            EvalError::AlignmentError(msg) => {
                assert!(msg.contains('1') && msg.contains('2'), "{msg}");
            }
            other => panic!("expected AlignmentError, got {other}"),
        }
    }

    #[test]
    fn csv_has_one_row_per_record() {
        let token = HashedTokenEmbedder::new(64);
        let report_emb = HashedBagOfWordsEmbedder::new(64);
        let preds = pairs(&[(0, "a b"), (1, "c d")]);
        let report = evaluate_run(
            &preds,
            &preds.clone(),
            &[],
            &token,
            &report_emb,
            &TokenSetExtractor,
            0.7,
        )
        .unwrap();
        let mut csv = Vec::new();
        write_report_csv(&report, &mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert_eq!(csv.lines().count(), 3); // header + 2 rows
        assert!(csv.lines().nth(1).unwrap().starts_with("0,1.000000"));
    }
}
