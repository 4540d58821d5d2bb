//! HTTP chat provider: `POST {base_url}/chat` with retry and bounded
//! concurrency.

use super::{ChatProvider, CompletionRequest, ProviderKind};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    text: String,
}

/// Counting semaphore bounding in-flight requests.
struct Gate {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Gate {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.gate.permits.lock().unwrap() += 1;
        self.gate.available.notify_one();
    }
}

/// Chat-completion endpoint client. Transient failures (transport errors and
/// 5xx) are retried with exponential backoff; 4xx surfaces immediately.
/// Bearer auth comes from `FINSEC_API_KEY`.
pub struct HttpChatProvider {
    base_url: String,
    attempts: usize,
    backoff: Duration,
    gate: Gate,
    client: reqwest::blocking::Client,
}

impl HttpChatProvider {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self::with_policy(base_url, 3, Duration::from_millis(250), 4)
    }

    pub fn with_policy(
        base_url: impl Into<String>,
        attempts: usize,
        backoff: Duration,
        concurrency: usize,
    ) -> Self {
        Self {
            base_url: base_url.into(),
            attempts: attempts.max(1),
            backoff,
            gate: Gate::new(concurrency),
            client: reqwest::blocking::Client::new(),
        }
    }

    fn try_once(&self, body: &ChatRequest<'_>) -> std::result::Result<String, (bool, String)> {
        let url = format!("{}/chat", self.base_url.trim_end_matches('/'));
        let mut request = self.client.post(&url).json(body);
        if let Ok(key) = std::env::var("FINSEC_API_KEY") {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| (true, e.to_string()))?;
        let status = response.status();
        if status.is_server_error() {
            return Err((true, format!("status {status}")));
        }
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err((false, format!("status {status}: {body}")));
        }
        let parsed: ChatResponse = response.json().map_err(|e| (false, e.to_string()))?;
        Ok(parsed.text)
    }
}

impl ChatProvider for HttpChatProvider {
    fn complete(&self, prompt: &str, request: &CompletionRequest) -> Result<String> {
        let _permit = self.gate.acquire();
        let body = ChatRequest {
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: request.decode.temperature,
            max_tokens: request.decode.max_tokens,
            seed: request.decode.seed,
        };
        let mut log = Vec::new();
        for attempt in 0..self.attempts {
            match self.try_once(&body) {
                Ok(text) => return Ok(text),
                Err((retryable, message)) => {
                    log.push(format!("attempt {}: {message}", attempt + 1));
                    if !retryable {
                        let status = message
                            .strip_prefix("status ")
                            .and_then(|s| s.split(|c: char| !c.is_ascii_digit()).next())
                            .and_then(|s| s.parse().ok())
                            .unwrap_or(0);
                        return Err(Error::HttpStatus {
                            status,
                            body: message,
                        });
                    }
                    if attempt + 1 < self.attempts {
                        std::thread::sleep(self.backoff * 2u32.pow(attempt as u32));
                    }
                }
            }
        }
        Err(Error::Transport {
            attempts: self.attempts,
            log,
        })
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Http
    }
}
