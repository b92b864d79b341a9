//! Report-level and sentence-level text corpora.
//!
//! A corpus is an ordered, immutable list of records at one level. Reports
//! are ingested from a line-delimited JSON file (`{"study_id": ..., "text":
//! ...}` per line), split into sentences with a rule-based splitter, and
//! deduplicated on whitespace-normalized text. Corpora persist as JSONL with
//! one object per record.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::normalize_whitespace;

/// Whether a corpus holds whole report impressions or single sentences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusLevel {
    Report,
    Sentence,
}

impl std::fmt::Display for CorpusLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CorpusLevel::Report => f.write_str("report"),
            CorpusLevel::Sentence => f.write_str("sentence"),
        }
    }
}

/// One retrievable text unit: a whole report impression or one sentence.
///
/// `parent_report_id` is set exactly when `level` is `Sentence` and names the
/// report record the sentence came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub record_id: u64,
    pub study_id: String,
    pub level: CorpusLevel,
    pub text: String,
    pub parent_report_id: Option<u64>,
}

/// An ordered, single-level collection of records.
///
/// Record ids are strictly increasing. A built corpus is immutable and safe
/// to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    level: CorpusLevel,
    records: Vec<CorpusRecord>,
}

/// Counters reported by ingestion.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct IngestStats {
    /// Records that parsed but had blank text and were skipped.
    pub blank_skipped: usize,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("expected a {expected} corpus, got {got}")]
    WrongLevel {
        expected: CorpusLevel,
        got: CorpusLevel,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("record {record_id}: {message}")]
    InvalidRecord { record_id: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One line of a raw reports file.
#[derive(Deserialize)]
struct ReportLine {
    study_id: String,
    text: String,
}

impl Corpus {
    /// Builds a corpus from records, validating level consistency and
    /// strictly increasing record ids.
    pub fn from_records(
        level: CorpusLevel,
        records: Vec<CorpusRecord>,
    ) -> Result<Self, CorpusError> {
        let mut prev_id: Option<u64> = None;
        for rec in &records {
            if rec.level != level {
                return Err(CorpusError::InvalidRecord {
                    record_id: rec.record_id,
                    message: format!("level {} in a {} corpus", rec.level, level),
                });
            }
            if normalize_whitespace(&rec.text).is_empty() {
                return Err(CorpusError::InvalidRecord {
                    record_id: rec.record_id,
                    message: "blank text".into(),
                });
            }
            let parent_ok = match level {
                CorpusLevel::Report => rec.parent_report_id.is_none(),
                CorpusLevel::Sentence => rec.parent_report_id.is_some(),
            };
            if !parent_ok {
                return Err(CorpusError::InvalidRecord {
                    record_id: rec.record_id,
                    message: format!("parent_report_id mismatch for {} record", rec.level),
                });
            }
            if let Some(prev) = prev_id {
                if rec.record_id <= prev {
                    return Err(CorpusError::InvalidRecord {
                        record_id: rec.record_id,
                        message: format!("record_id not increasing (previous {prev})"),
                    });
                }
            }
            prev_id = Some(rec.record_id);
        }
        Ok(Corpus { level, records })
    }

    pub fn level(&self) -> CorpusLevel {
        self.level
    }

    pub fn records(&self) -> &[CorpusRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Looks up a record by id. Ids are strictly increasing, so this is a
    /// binary search.
    pub fn get(&self, record_id: u64) -> Option<&CorpusRecord> {
        self.records
            .binary_search_by_key(&record_id, |r| r.record_id)
            .ok()
            .map(|idx| &self.records[idx])
    }

    /// Writes the corpus as JSONL, one record object per line, LF endings.
    pub fn save<W: Write>(&self, writer: W) -> Result<(), CorpusError> {
        let mut w = BufWriter::new(writer);
        for rec in &self.records {
            let line = serde_json::to_string(rec).map_err(|e| CorpusError::Parse {
                line: 0,
                message: e.to_string(),
            })?;
            w.write_all(line.as_bytes())?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_to_path(&self, path: &Path) -> Result<(), CorpusError> {
        self.save(File::create(path)?)
    }

    /// Loads a corpus written by [`Corpus::save`]. The level is taken from
    /// the first record; mixed levels are rejected.
    pub fn load<R: Read>(reader: R) -> Result<Self, CorpusError> {
        let mut records = Vec::new();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CorpusRecord =
                serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
            records.push(rec);
        }
        if records.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let level = records[0].level;
        Corpus::from_records(level, records)
    }

    pub fn load_from_path(path: &Path) -> Result<Self, CorpusError> {
        Corpus::load(File::open(path)?)
    }
}

/// Reads a line-delimited reports file into a report-level corpus.
///
/// Each non-empty line is a JSON object with `study_id` and `text`. Record
/// ids are assigned sequentially from 0 in input order. Text is kept
/// verbatim; records whose text is blank after whitespace normalization are
/// skipped and counted.
pub fn ingest_reports<R: Read>(reader: R) -> Result<(Corpus, IngestStats), CorpusError> {
    let mut records = Vec::new();
    let mut stats = IngestStats::default();
    let mut next_id = 0u64;
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ReportLine = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if normalize_whitespace(&parsed.text).is_empty() {
            log::warn!("line {}: blank report text, skipped", lineno + 1);
            stats.blank_skipped += 1;
            continue;
        }
        records.push(CorpusRecord {
            record_id: next_id,
            study_id: parsed.study_id,
            level: CorpusLevel::Report,
            text: parsed.text,
            parent_report_id: None,
        });
        next_id += 1;
    }
    if records.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok((
        Corpus {
            level: CorpusLevel::Report,
            records,
        },
        stats,
    ))
}

pub fn ingest_reports_from_path(path: &Path) -> Result<(Corpus, IngestStats), CorpusError> {
    ingest_reports(File::open(path)?)
}

// Words that end with a period without terminating a sentence.
const ABBREVIATIONS: &[&str] = &["dr", "vs", "mr", "mrs", "st"];

/// Splits a report-level corpus into a sentence-level corpus.
///
/// Sentences end at `.`, `!`, or `?` followed by whitespace or end of text.
/// A period does not split when the preceding word is a known abbreviation
/// ("Dr.", "vs.") or when the next non-space character is a digit, which
/// keeps spaced-out measurements like "3. 5 cm" intact. Sentence record ids
/// are assigned sequentially from 0; each carries its parent report id.
pub fn sentence_split(corpus: &Corpus) -> Result<Corpus, CorpusError> {
    if corpus.level != CorpusLevel::Report {
        return Err(CorpusError::WrongLevel {
            expected: CorpusLevel::Report,
            got: corpus.level,
        });
    }
    let mut records = Vec::new();
    let mut next_id = 0u64;
    for report in &corpus.records {
        for sentence in split_sentences(&report.text) {
            records.push(CorpusRecord {
                record_id: next_id,
                study_id: report.study_id.clone(),
                level: CorpusLevel::Sentence,
                text: sentence,
                parent_report_id: Some(report.record_id),
            });
            next_id += 1;
        }
    }
    if records.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(Corpus {
        level: CorpusLevel::Sentence,
        records,
    })
}

/// Rule-based sentence boundary detection over one report text.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let ch = chars[i];
        if ch == '.' || ch == '!' || ch == '?' {
            let at_end = i + 1 == chars.len();
            let before_space = !at_end && chars[i + 1].is_whitespace();
            if (at_end || before_space) && !(ch == '.' && suppress_period(&chars, start, i)) {
                let segment: String = chars[start..=i].iter().collect();
                let segment = segment.trim();
                if !segment.is_empty() {
                    sentences.push(segment.to_string());
                }
                i += 1;
                while i < chars.len() && chars[i].is_whitespace() {
                    i += 1;
                }
                start = i;
                continue;
            }
        }
        i += 1;
    }
    if start < chars.len() {
        let tail: String = chars[start..].iter().collect();
        let tail = tail.trim();
        if !tail.is_empty() {
            sentences.push(tail.to_string());
        }
    }
    vec_or_whole(sentences, text)
}

fn vec_or_whole(sentences: Vec<String>, text: &str) -> Vec<String> {
    if sentences.is_empty() {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            Vec::new()
        } else {
            vec![trimmed.to_string()]
        }
    } else {
        sentences
    }
}

/// True when the period at `idx` should not end a sentence.
fn suppress_period(chars: &[char], start: usize, idx: usize) -> bool {
    // next non-whitespace char is a digit: spaced decimal like "3. 5 cm"
    let mut j = idx + 1;
    while j < chars.len() && chars[j].is_whitespace() {
        j += 1;
    }
    if j < chars.len() && chars[j].is_ascii_digit() {
        return true;
    }
    // word immediately before the period is an abbreviation
    let mut w = idx;
    while w > start && chars[w - 1].is_alphabetic() {
        w -= 1;
    }
    if w < idx {
        let word: String = chars[w..idx].iter().collect::<String>().to_lowercase();
        if ABBREVIATIONS.contains(&word.as_str()) {
            return true;
        }
    }
    false
}

/// Removes records whose whitespace-normalized text already occurred,
/// keeping the first occurrence (lowest record id). Comparison is
/// case-sensitive on the normalized text, and survivors carry the
/// normalized text. Ids and relative order are preserved.
pub fn dedupe(corpus: &Corpus) -> Corpus {
    let mut seen = std::collections::HashSet::new();
    let records = corpus
        .records
        .iter()
        .filter_map(|rec| {
            let text = normalize_whitespace(&rec.text);
            seen.insert(text.clone()).then(|| CorpusRecord {
                text,
                ..rec.clone()
            })
        })
        .collect();
    Corpus {
        level: corpus.level,
        records,
    }
}
