//! Minimal chat-completions client: JSON body
//! `{"model","messages","temperature","n","stop"}` POSTed to a configurable
//! URL, bearer auth from `GO1_API_KEY`, completions read from
//! `choices[i].message.content`. Transient failures (transport errors, 429,
//! 5xx) are retried with exponential backoff.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const API_KEY_ENV: &str = "GO1_API_KEY";

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    Response(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub n: usize,
    pub stop: Vec<String>,
}

impl ChatRequest {
    pub fn user(model: &str, content: String, temperature: f64, n: usize) -> Self {
        ChatRequest {
            model: model.to_string(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content,
            }],
            temperature,
            n,
            stop: Vec::new(),
        }
    }
}

/// Anything that turns a chat request into `n` completion strings.
pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, ChatError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(10),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Blocking HTTP client. Cheap to clone; clones share the connection pool.
#[derive(Clone)]
pub struct HttpChatClient {
    url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

impl HttpChatClient {
    /// Reads the API key from `GO1_API_KEY` if it is set.
    pub fn new(url: &str) -> Self {
        Self::with_key(url, std::env::var(API_KEY_ENV).ok())
    }

    pub fn with_key(url: &str, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpChatClient {
            url: url.to_string(),
            api_key,
            retry: RetryPolicy::default(),
            agent,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn attempt(&self, request: &ChatRequest) -> Result<Vec<String>, Attempt> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(request)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}: {body}")));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(ChatError::Status { status, body }));
        }
        parse_choices(&body).map_err(Attempt::Fatal)
    }
}

enum Attempt {
    Retry(String),
    Fatal(ChatError),
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, ChatError> {
        let mut attempt = 0;
        loop {
            match self.attempt(request) {
                Ok(out) => return Ok(out),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(message)) => {
                    if attempt >= self.retry.max_retries {
                        return Err(ChatError::Transport {
                            attempts: attempt + 1,
                            message,
                        });
                    }
                    std::thread::sleep(self.retry.delay(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

fn parse_choices(body: &str) -> Result<Vec<String>, ChatError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| ChatError::Response(e.to_string()))?;
    let choices = value
        .get("choices")
        .and_then(|c| c.as_array())
        .ok_or_else(|| ChatError::Response("missing 'choices' array".into()))?;
    choices
        .iter()
        .map(|c| {
            c.pointer("/message/content")
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .ok_or_else(|| ChatError::Response("choice without message.content".into()))
        })
        .collect()
}
