//! Run configuration for `radrag generate`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use radrag_core::generation::GenerationConfig;

/// Everything a generation run needs, loaded from a JSON file. Command-line
/// flags override nothing here; the file is the record of the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Corpus JSONL produced by `radrag ingest`.
    pub corpus: PathBuf,
    /// Prebuilt index file from `radrag build-index` (already aligned and,
    /// typically, normalized). Exactly one of `index`/`embeddings` is set.
    pub index: Option<PathBuf>,
    /// Raw per-record embeddings to build the index from at startup.
    pub embeddings: Option<PathBuf>,
    /// Query embeddings, one row per query id.
    pub queries: PathBuf,
    /// Directory of template overrides; builtin templates otherwise.
    pub templates_dir: Option<PathBuf>,
    /// Vocabulary lists (JSON); required for structured generation.
    pub vocab: Option<PathBuf>,
    /// Few-shot examples (JSON array); required for structured generation.
    pub shots: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub generation: GenerationConfig,
    /// Render structured few-shot prompts and parse the JSON replies.
    pub structured: bool,
    /// L2-normalize embedding rows when building the index here.
    pub normalize_embeddings: bool,
    /// One of `http`, `stub-echo`, `stub-concatenate`, `stub-extractive-dedup`.
    pub client: String,
    /// API root for the `http` client, e.g. `https://api.openai.com/v1`.
    /// The key comes from `RADRAG_API_KEY` (or `OPENAI_API_KEY`), never a flag.
    pub endpoint: Option<String>,
    pub max_in_flight: usize,
    pub retry_attempts: u32,
    pub retry_backoff_ms: u64,
    /// Hallucination threshold recorded in the manifest.
    pub threshold: f64,
    /// Recorded for reproducibility; the pipeline itself has no local
    /// randomness.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: PathBuf::new(),
            index: None,
            embeddings: None,
            queries: PathBuf::new(),
            templates_dir: None,
            vocab: None,
            shots: None,
            output_dir: PathBuf::new(),
            generation: GenerationConfig::default(),
            structured: false,
            normalize_embeddings: true,
            client: "http".to_string(),
            endpoint: None,
            max_in_flight: 4,
            retry_attempts: 3,
            retry_backoff_ms: 1000,
            threshold: 0.70,
            seed: 0,
        }
    }
}

pub const CLIENT_KINDS: &[&str] = &[
    "http",
    "stub-echo",
    "stub-concatenate",
    "stub-extractive-dedup",
];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&raw)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let require = |path: &Path, what: &str| -> Result<()> {
            if path.as_os_str().is_empty() {
                bail!("config field `{what}` is required");
            }
            if !path.exists() {
                bail!("{what} path does not exist: {}", path.display());
            }
            Ok(())
        };
        require(&self.corpus, "corpus")?;
        require(&self.queries, "queries")?;
        if self.output_dir.as_os_str().is_empty() {
            bail!("config field `output_dir` is required");
        }
        match (&self.index, &self.embeddings) {
            (Some(index), None) => require(index, "index")?,
            (None, Some(embeddings)) => require(embeddings, "embeddings")?,
            (Some(_), Some(_)) => bail!("set either `index` or `embeddings`, not both"),
            (None, None) => bail!("one of `index` or `embeddings` is required"),
        }
        if let Some(dir) = &self.templates_dir {
            require(dir, "templates_dir")?;
        }
        if !CLIENT_KINDS.contains(&self.client.as_str()) {
            bail!(
                "unknown client `{}`; expected one of {CLIENT_KINDS:?}",
                self.client
            );
        }
        if self.client == "http" && self.endpoint.is_none() {
            bail!("client `http` requires `endpoint`");
        }
        if self.structured {
            match (&self.vocab, &self.shots) {
                (Some(vocab), Some(shots)) => {
                    require(vocab, "vocab")?;
                    require(shots, "shots")?;
                }
                _ => bail!("structured generation requires `vocab` and `shots`"),
            }
        }
        Ok(())
    }

    /// Canonical hash of the config, recorded in the run manifest.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
