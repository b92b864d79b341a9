//! LLM transport: the client trait, the OpenAI-compatible HTTP client, and
//! deterministic stub clients for hermetic runs.

mod http;
pub mod mock_server;
mod stubs;

use serde::Serialize;
use thiserror::Error;

use crate::prompting::RenderedPrompt;

pub use http::{HttpLlmClient, RetryPolicy};
pub use stubs::{
    ConcatenateClient, EchoClient, ExtractiveDedupClient, FailingClient, FixedResponseClient,
    RecordingClient,
};

/// One generation request: the rendered prompt plus decoding parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlmRequest {
    pub prompt: RenderedPrompt,
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

/// One generation result. `text` is non-empty on success.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmResponse {
    pub text: String,
    pub prompt_tokens: Option<u32>,
    pub completion_tokens: Option<u32>,
    pub finish_reason: Option<String>,
}

impl LlmResponse {
    pub fn from_text(text: impl Into<String>) -> Self {
        LlmResponse {
            text: text.into(),
            prompt_tokens: None,
            completion_tokens: None,
            finish_reason: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    /// The endpoint rejected the request (4xx other than 429); not retried.
    #[error("request rejected with HTTP {status}: {message}")]
    RequestRejected { status: u16, message: String },
    /// Transport failures, timeouts, 429 and 5xx after retries ran out.
    #[error("llm unavailable after {attempts} attempt(s): {last_error}")]
    Unavailable { attempts: u32, last_error: String },
    #[error("invalid response: {0}")]
    InvalidResponse(String),
}

/// A synchronous LLM backend. Implementations must be callable from many
/// threads at once.
pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError>;

    /// Short identifier recorded in run manifests.
    fn name(&self) -> &str;
}
