//! Provider-agnostic completion gateway: retries with exponential backoff, an
//! overall deadline, a per-provider concurrency cap and yes/no verdicts.
//!
//! Nothing outside this module talks to a model provider.

mod http;
mod mock;

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

pub use http::HttpChatProvider;
pub use mock::{MockRule, MockScript, MockScriptError, ScriptedMock};

use crate::prompt::PromptText;

pub const DEFAULT_ASSISTANT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_MAX_OUTPUT_CHARS: usize = 8000;
pub const DEFAULT_MAX_CONCURRENT: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: PromptText,
    pub temperature: f64,
    pub max_output_chars: usize,
    pub request_id: String,
}

impl CompletionRequest {
    pub fn new(prompt: PromptText) -> Self {
        Self {
            prompt,
            temperature: DEFAULT_ASSISTANT_TEMPERATURE,
            max_output_chars: DEFAULT_MAX_OUTPUT_CHARS,
            request_id: uuid::Uuid::new_v4().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub provider_id: String,
    pub latency_ms: u64,
    pub truncated: bool,
    pub attempts: u32,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider rejected request: {0}")]
    Rejected(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("request {request_id}: deadline exceeded after {attempts} attempt(s)")]
    DeadlineExceeded { request_id: String, attempts: u32 },
    #[error("request {request_id}: retries exhausted after {attempts} attempt(s): {last_error}")]
    RetriesExhausted { request_id: String, attempts: u32, last_error: String },
    #[error("request {request_id}: provider rejected: {message}")]
    Rejected { request_id: String, message: String },
    #[error("request {request_id}: unparseable yes/no verdict `{reply}`")]
    UnparseableVerdict { request_id: String, reply: String },
}

impl GatewayError {
    pub fn request_id(&self) -> &str {
        match self {
            GatewayError::DeadlineExceeded { request_id, .. }
            | GatewayError::RetriesExhausted { request_id, .. }
            | GatewayError::Rejected { request_id, .. }
            | GatewayError::UnparseableVerdict { request_id, .. } => request_id,
        }
    }
}

#[async_trait]
pub trait CompletionProvider: Send + Sync {
    fn provider_id(&self) -> &str;

    async fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first attempt; `R` retries means at most `R + 1` calls.
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub deadline_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, initial_backoff_ms: 250, max_backoff_ms: 4000, deadline_ms: 60_000 }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }
}

pub struct LlmGateway {
    provider: Arc<dyn CompletionProvider>,
    policy: RetryPolicy,
    permits: Arc<Semaphore>,
}

impl LlmGateway {
    pub fn new(provider: Arc<dyn CompletionProvider>, policy: RetryPolicy, max_concurrent: usize) -> Self {
        Self { provider, policy, permits: Arc::new(Semaphore::new(max_concurrent.max(1))) }
    }

    pub fn with_defaults(provider: Arc<dyn CompletionProvider>) -> Self {
        Self::new(provider, RetryPolicy::default(), DEFAULT_MAX_CONCURRENT)
    }

    pub fn provider_id(&self) -> &str {
        self.provider.provider_id()
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    pub async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        let attempts = AtomicU32::new(0);
        let started = Instant::now();
        let deadline = Duration::from_millis(self.policy.deadline_ms);
        match tokio::time::timeout(deadline, self.attempt_loop(request, &attempts)).await {
            Ok(Ok(raw)) => {
                let (text, truncated) = truncate_chars(raw, request.max_output_chars);
                Ok(CompletionResult {
                    text,
                    provider_id: self.provider.provider_id().to_owned(),
                    latency_ms: started.elapsed().as_millis() as u64,
                    truncated,
                    attempts: attempts.load(Ordering::SeqCst),
                })
            }
            Ok(Err(e)) => Err(e),
            Err(_) => Err(GatewayError::DeadlineExceeded {
                request_id: request.request_id.clone(),
                attempts: attempts.load(Ordering::SeqCst),
            }),
        }
    }

    async fn attempt_loop(&self, request: &CompletionRequest, attempts: &AtomicU32) -> Result<String, GatewayError> {
        // FIFO: tokio's semaphore is fair.
        let _permit = self.permits.acquire().await.expect("gateway semaphore closed");
        loop {
            let attempt = attempts.fetch_add(1, Ordering::SeqCst) + 1;
            match self.provider.complete(request).await {
                Ok(text) => return Ok(text),
                Err(ProviderError::Rejected(message)) => {
                    return Err(GatewayError::Rejected { request_id: request.request_id.clone(), message })
                }
                Err(ProviderError::Transient(message)) => {
                    if attempt > self.policy.max_retries {
                        return Err(GatewayError::RetriesExhausted {
                            request_id: request.request_id.clone(),
                            attempts: attempt,
                            last_error: message,
                        });
                    }
                    tracing::debug!(request_id = %request.request_id, attempt, %message, "retrying completion");
                    tokio::time::sleep(self.policy.backoff(attempt)).await;
                }
            }
        }
    }

    /// Asks a constrained yes/no question at temperature 0.
    pub async fn yes_no(&self, question: &str) -> Result<bool, GatewayError> {
        let rendered = format!("Answer with exactly one word, yes or no.\n\n{question}");
        let request = CompletionRequest {
            prompt: PromptText::plain(rendered),
            temperature: 0.0,
            max_output_chars: 32,
            request_id: uuid::Uuid::new_v4().to_string(),
        };
        let result = self.complete(&request).await?;
        parse_verdict(&result.text).ok_or(GatewayError::UnparseableVerdict {
            request_id: request.request_id,
            reply: result.text,
        })
    }
}

/// Leading `yes`/`no` word, case-insensitive; punctuation after it is ignored.
pub fn parse_verdict(reply: &str) -> Option<bool> {
    let word: String = reply.trim_start().chars().take_while(|c| c.is_alphabetic()).collect();
    match word.to_lowercase().as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

fn truncate_chars(text: String, max_chars: usize) -> (String, bool) {
    match text.char_indices().nth(max_chars) {
        Some((byte, _)) => (text[..byte].to_owned(), true),
        None => (text, false),
    }
}
