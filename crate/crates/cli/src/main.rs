//! `radrag`: retrieval-augmented impression generation pipeline.
//!
//! Commands communicate only through files so runs are reproducible batch
//! jobs: ingest a corpus, attach embeddings, retrieve, generate against an
//! LLM endpoint (or a deterministic stub), and evaluate the outputs.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use radrag_core::corpus::CorpusLevel;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LevelArg {
    Report,
    Sentence,
}

impl From<LevelArg> for CorpusLevel {
    fn from(level: LevelArg) -> Self {
        match level {
            LevelArg::Report => CorpusLevel::Report,
            LevelArg::Sentence => CorpusLevel::Sentence,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "radrag",
    version,
    about = "Retrieval-augmented radiology impression pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Ingest a line-delimited reports file into a corpus (with dedup)
    Ingest {
        /// JSONL input: one {"study_id", "text"} object per line
        #[arg(long)]
        reports: PathBuf,
        #[arg(long, value_enum, default_value = "report")]
        level: LevelArg,
        /// Corpus JSONL output path
        #[arg(long)]
        out: PathBuf,
        /// Skip duplicate-line removal
        #[arg(long)]
        keep_duplicates: bool,
    },
    /// Embed corpus records or query texts with the hashed bag-of-words
    /// embedder (for hermetic runs; real embeddings arrive as files)
    Embed {
        #[arg(long, conflicts_with = "texts")]
        corpus: Option<PathBuf>,
        /// JSONL of {"query_id", "text"} lines
        #[arg(long)]
        texts: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        dim: usize,
    },
    /// Align an embedding file to a corpus and persist the index
    BuildIndex {
        #[arg(long)]
        corpus: PathBuf,
        /// EMB1 or JSONL embeddings keyed by record id
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep raw rows instead of L2-normalizing them
        #[arg(long)]
        no_normalize: bool,
    },
    /// Exact top-k retrieval for each query embedding
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(short, long, default_value_t = 3)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        /// Include the retrieved record text in the output
        #[arg(long)]
        include_text: bool,
    },
    /// Generate impressions for every query in a run config
    Generate {
        /// Run configuration (JSON); see README for the schema
        #[arg(long)]
        config: PathBuf,
    },
    /// Score predictions against references (and contexts, when present)
    Evaluate {
        /// impressions.jsonl from `generate`
        #[arg(long)]
        predictions: PathBuf,
        /// JSONL of {"query_id", "text"} reference impressions
        #[arg(long)]
        references: PathBuf,
        /// JSONL of {"query_id", "text"} context texts; defaults to the
        /// context field of the predictions file
        #[arg(long)]
        contexts: Option<PathBuf>,
        #[command(flatten)]
        sidecars: commands::SidecarArgs,
        /// JSON array of entity terms for the keyword extractor
        #[arg(long)]
        entity_vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 0.70)]
        threshold: f64,
        /// Hashed embedder dimension (hermetic mode)
        #[arg(long, default_value_t = 1024)]
        dim: usize,
        #[arg(long)]
        out_json: Option<PathBuf>,
        #[arg(long)]
        out_csv: Option<PathBuf>,
    },
    /// Score generations against their retrieved context
    Hallucinate {
        /// impressions.jsonl from `generate`
        #[arg(long)]
        generations: PathBuf,
        /// Context texts override (JSONL {"query_id", "text"})
        #[arg(long)]
        contexts: Option<PathBuf>,
        #[arg(long, default_value_t = 0.70)]
        threshold: f64,
        #[arg(long, default_value_t = 1024)]
        dim: usize,
        /// Output path; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Ingest {
            reports,
            level,
            out,
            keep_duplicates,
        } => commands::cmd_ingest(&reports, level.into(), &out, keep_duplicates),
        Command::Embed {
            corpus,
            texts,
            out,
            dim,
        } => commands::cmd_embed(corpus.as_deref(), texts.as_deref(), &out, dim),
        Command::BuildIndex {
            corpus,
            embeddings,
            out,
            no_normalize,
        } => commands::cmd_build_index(&corpus, &embeddings, &out, no_normalize),
        Command::Retrieve {
            index,
            corpus,
            queries,
            k,
            out,
            include_text,
        } => commands::cmd_retrieve(&index, &corpus, &queries, k, &out, include_text),
        Command::Generate { config } => commands::cmd_generate(&config),
        Command::Evaluate {
            predictions,
            references,
            contexts,
            sidecars,
            entity_vocab,
            threshold,
            dim,
            out_json,
            out_csv,
        } => commands::cmd_evaluate(
            &predictions,
            &references,
            contexts.as_deref(),
            &sidecars,
            entity_vocab.as_deref(),
            threshold,
            dim,
            out_json.as_deref(),
            out_csv.as_deref(),
        ),
        Command::Hallucinate {
            generations,
            contexts,
            threshold,
            dim,
            out,
        } => commands::cmd_hallucinate(
            &generations,
            contexts.as_deref(),
            threshold,
            dim,
            out.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
