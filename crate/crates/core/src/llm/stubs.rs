//! Deterministic stub clients for hermetic pipelines and tests.
//!
//! Stubs answer from the prompt alone, with no network. They locate the
//! context block (and, for refine prompts, the existing impression) by the
//! section markers the bundled templates emit.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{LlmClient, LlmError, LlmRequest, LlmResponse};
use crate::util::normalize_whitespace;

/// The section terminators that can follow a context block.
const CONTEXT_ENDS: &[&str] = &["\n\nImpression summary:", "\nIMPRESSION:"];

/// Extracts the text of the last CONTEXT section of a rendered prompt.
pub(crate) fn extract_context(prompt_text: &str) -> String {
    let Some(pos) = prompt_text.rfind("CONTEXT:") else {
        return prompt_text.trim().to_string();
    };
    let after = &prompt_text[pos + "CONTEXT:".len()..];
    let after = after
        .strip_prefix('\n')
        .or_else(|| after.strip_prefix(' '))
        .unwrap_or(after);
    let end = CONTEXT_ENDS
        .iter()
        .filter_map(|marker| after.find(marker))
        .min()
        .unwrap_or(after.len());
    after[..end].trim_end_matches('\n').to_string()
}

/// Extracts the EXISTING IMPRESSION section of a refine prompt, if present.
pub(crate) fn extract_existing_impression(prompt_text: &str) -> Option<String> {
    let pos = prompt_text.find("EXISTING IMPRESSION:\n")?;
    let after = &prompt_text[pos + "EXISTING IMPRESSION:\n".len()..];
    let end = after.find("\n\nCONTEXT:")?;
    Some(after[..end].to_string())
}

/// Returns the context block verbatim.
pub struct EchoClient;

impl LlmClient for EchoClient {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        Ok(LlmResponse::from_text(extract_context(
            request.prompt.primary_text(),
        )))
    }

    fn name(&self) -> &str {
        "stub-echo"
    }
}

/// Returns `previous impression + " " + context`; on a prompt without an
/// existing impression it echoes the context. Unrolls a refine chain into
/// the concatenation of its inputs.
pub struct ConcatenateClient;

impl LlmClient for ConcatenateClient {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let text = request.prompt.primary_text();
        let context = extract_context(text);
        let out = match extract_existing_impression(text) {
            Some(prev) => format!("{prev} {context}"),
            None => context,
        };
        Ok(LlmResponse::from_text(out))
    }

    fn name(&self) -> &str {
        "stub-concatenate"
    }
}

/// Joins the unique context records with single spaces. The output is
/// restricted to sentences that appear in the context, which makes it the
/// grounded-by-construction reference point for hallucination scoring.
pub struct ExtractiveDedupClient;

impl LlmClient for ExtractiveDedupClient {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let context = extract_context(request.prompt.primary_text());
        let mut seen = std::collections::HashSet::new();
        let unique: Vec<&str> = context
            .lines()
            .filter(|line| !line.trim().is_empty())
            .filter(|line| seen.insert(normalize_whitespace(line)))
            .collect();
        Ok(LlmResponse::from_text(unique.join(" ")))
    }

    fn name(&self) -> &str {
        "stub-extractive-dedup"
    }
}

/// Always returns the configured text.
pub struct FixedResponseClient {
    pub text: String,
}

impl LlmClient for FixedResponseClient {
    fn complete(&self, _request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        Ok(LlmResponse::from_text(self.text.clone()))
    }

    fn name(&self) -> &str {
        "stub-fixed"
    }
}

/// Delegates to an inner client but fails the nth call (1-based), for
/// failure-injection tests.
pub struct FailingClient<C> {
    inner: C,
    fail_on_call: usize,
    calls: AtomicUsize,
}

impl<C: LlmClient> FailingClient<C> {
    pub fn new(inner: C, fail_on_call: usize) -> Self {
        FailingClient {
            inner,
            fail_on_call,
            calls: AtomicUsize::new(0),
        }
    }
}

impl<C: LlmClient> LlmClient for FailingClient<C> {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        if call == self.fail_on_call {
            return Err(LlmError::Unavailable {
                attempts: 1,
                last_error: format!("injected failure on call {call}"),
            });
        }
        self.inner.complete(request)
    }

    fn name(&self) -> &str {
        "stub-failing"
    }
}

/// Records every request before delegating, so tests can assert on the
/// exact prompts a pipeline produced.
pub struct RecordingClient<C> {
    inner: C,
    log: Mutex<Vec<LlmRequest>>,
}

impl<C: LlmClient> RecordingClient<C> {
    pub fn new(inner: C) -> Self {
        RecordingClient {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<LlmRequest> {
        self.log.lock().expect("request log").clone()
    }
}

impl<C: LlmClient> LlmClient for RecordingClient<C> {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        self.log.lock().expect("request log").push(request.clone());
        self.inner.complete(request)
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}
