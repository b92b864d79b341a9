//! OpenAI-compatible JSON-over-HTTP client.
//!
//! Chat prompts post to `{base}/chat/completions` as a system/user message
//! pair; completion prompts post to `{base}/completions`. Transport errors,
//! timeouts, HTTP 429 and 5xx are retried with exponential backoff; any
//! other 4xx fails immediately.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{LlmClient, LlmError, LlmRequest, LlmResponse};
use crate::prompting::RenderedPrompt;

/// Retry schedule for transient failures.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
            multiplier: 2.0,
        }
    }
}

pub struct HttpLlmClient {
    base_url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    http: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatCompletionRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u32>,
    completion_tokens: Option<u32>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<ChatChoice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    text: String,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
    usage: Option<Usage>,
}

enum AttemptError {
    Retryable(String),
    Fatal(LlmError),
}

impl HttpLlmClient {
    /// `base_url` is the API root the completion paths append to, e.g.
    /// `https://api.openai.com/v1`. The key, when present, is sent as a
    /// bearer token.
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| LlmError::InvalidResponse(format!("http client: {e}")))?;
        Ok(HttpLlmClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            retry: RetryPolicy::default(),
            http,
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn post_json(&self, path: &str, body: String) -> Result<String, AttemptError> {
        let url = format!("{}/{}", self.base_url, path);
        let mut req = self
            .http
            .post(&url)
            .header("Content-Type", "application/json")
            .body(body);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let resp = req
            .send()
            .map_err(|e| AttemptError::Retryable(format!("transport: {e}")))?;
        let status = resp.status();
        let text = resp
            .bytes()
            .map_err(|e| AttemptError::Retryable(format!("read body: {e}")))
            .map(|b| String::from_utf8_lossy(&b).into_owned())?;
        if status.is_success() {
            Ok(text)
        } else if status.as_u16() == 429 || status.is_server_error() {
            Err(AttemptError::Retryable(format!("HTTP {}", status.as_u16())))
        } else {
            Err(AttemptError::Fatal(LlmError::RequestRejected {
                status: status.as_u16(),
                message: text,
            }))
        }
    }

    fn attempt(&self, request: &LlmRequest) -> Result<LlmResponse, AttemptError> {
        let (path, body) = match &request.prompt {
            RenderedPrompt::Chat { system, user } => {
                let wire = ChatCompletionRequest {
                    model: &request.model,
                    messages: vec![
                        WireMessage {
                            role: "system",
                            content: system,
                        },
                        WireMessage {
                            role: "user",
                            content: user,
                        },
                    ],
                    temperature: request.temperature,
                    max_tokens: request.max_output_tokens,
                };
                (
                    "chat/completions",
                    serde_json::to_string(&wire).expect("wire body"),
                )
            }
            RenderedPrompt::Completion { text } => {
                let wire = CompletionRequest {
                    model: &request.model,
                    prompt: text,
                    temperature: request.temperature,
                    max_tokens: request.max_output_tokens,
                };
                (
                    "completions",
                    serde_json::to_string(&wire).expect("wire body"),
                )
            }
        };
        let raw = self.post_json(path, body)?;
        let parsed = match &request.prompt {
            RenderedPrompt::Chat { .. } => {
                let resp: ChatCompletionResponse = serde_json::from_str(&raw)
                    .map_err(|e| AttemptError::Fatal(LlmError::InvalidResponse(e.to_string())))?;
                let choice = resp.choices.into_iter().next().ok_or_else(|| {
                    AttemptError::Fatal(LlmError::InvalidResponse("no choices".into()))
                })?;
                LlmResponse {
                    text: choice.message.content.unwrap_or_default(),
                    prompt_tokens: resp.usage.as_ref().and_then(|u| u.prompt_tokens),
                    completion_tokens: resp.usage.as_ref().and_then(|u| u.completion_tokens),
                    finish_reason: choice.finish_reason,
                }
            }
            RenderedPrompt::Completion { .. } => {
                let resp: CompletionResponse = serde_json::from_str(&raw)
                    .map_err(|e| AttemptError::Fatal(LlmError::InvalidResponse(e.to_string())))?;
                let choice = resp.choices.into_iter().next().ok_or_else(|| {
                    AttemptError::Fatal(LlmError::InvalidResponse("no choices".into()))
                })?;
                LlmResponse {
                    text: choice.text,
                    prompt_tokens: resp.usage.as_ref().and_then(|u| u.prompt_tokens),
                    completion_tokens: resp.usage.as_ref().and_then(|u| u.completion_tokens),
                    finish_reason: choice.finish_reason,
                }
            }
        };
        if parsed.text.is_empty() {
            return Err(AttemptError::Fatal(LlmError::InvalidResponse(
                "empty response text".into(),
            )));
        }
        Ok(parsed)
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let mut backoff = self.retry.initial_backoff;
        let attempts = self.retry.max_attempts.max(1);
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            match self.attempt(request) {
                Ok(resp) => return Ok(resp),
                Err(AttemptError::Fatal(err)) => return Err(err),
                Err(AttemptError::Retryable(msg)) => {
                    log::warn!("llm attempt {attempt}/{attempts} failed: {msg}");
                    last_error = msg;
                    if attempt < attempts {
                        std::thread::sleep(backoff);
                        backoff = backoff.mul_f64(self.retry.multiplier);
                    }
                }
            }
        }
        Err(LlmError::Unavailable {
            attempts,
            last_error,
        })
    }

    fn name(&self) -> &str {
        "http"
    }
}
