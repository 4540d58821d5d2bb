//! Chat-completion interface used by the deferred-risk and semantic-judge
//! layers. Two providers: a real HTTP endpoint and a deterministic scripted
//! stub. All network I/O of the generative layers goes through this module;
//! nothing else holds endpoint settings for chat completions.

mod http;
mod scripted;
pub mod templates;

pub use http::HttpChatProvider;
pub use scripted::{ScriptedProvider, ScriptedRule};
pub use templates::{render, TemplateId};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

/// Decoding parameters forwarded to the provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for DecodeParams {
    fn default() -> Self {
        // Temperature 0 and a fixed seed keep risk judgments reproducible on
        // providers that honor them.
        Self {
            temperature: 0.0,
            max_tokens: 512,
            seed: Some(0),
        }
    }
}

/// A completion request: template, slot values, decoding parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub template_id: TemplateId,
    pub variables: BTreeMap<String, String>,
    #[serde(default)]
    pub decode: DecodeParams,
}

impl CompletionRequest {
    pub fn new(template_id: TemplateId) -> Self {
        Self {
            template_id,
            variables: BTreeMap::new(),
            decode: DecodeParams::default(),
        }
    }

    pub fn var(mut self, slot: &str, value: impl Into<String>) -> Self {
        self.variables.insert(slot.to_string(), value.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Http,
    Scripted,
}

/// A completed generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub provider: ProviderKind,
    pub latency_ms: u64,
}

/// Something that can answer a rendered prompt.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, prompt: &str, request: &CompletionRequest) -> Result<String>;
    fn kind(&self) -> ProviderKind;
}

/// Template rendering plus provider dispatch.
#[derive(Clone)]
pub struct GenerativeBackend {
    provider: Arc<dyn ChatProvider>,
    decode: DecodeParams,
}

impl GenerativeBackend {
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        Self {
            provider,
            decode: DecodeParams::default(),
        }
    }

    pub fn with_decode(mut self, decode: DecodeParams) -> Self {
        self.decode = decode;
        self
    }

    pub fn scripted(provider: ScriptedProvider) -> Self {
        Self::new(Arc::new(provider))
    }

    pub fn provider_kind(&self) -> ProviderKind {
        self.provider.kind()
    }

    pub fn decode(&self) -> &DecodeParams {
        &self.decode
    }

    /// Render a request's template with its variables.
    pub fn render(&self, request: &CompletionRequest) -> Result<String> {
        templates::render(request.template_id, &request.variables)
    }

    /// Render and complete. Success implies non-empty response text.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        let prompt = self.render(request)?;
        let started = Instant::now();
        let text = self.provider.complete(&prompt, request)?;
        if text.is_empty() {
            return Err(Error::EmptyCompletion);
        }
        Ok(CompletionResponse {
            text,
            provider: self.provider.kind(),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }

    /// Build a request that inherits this backend's decoding defaults.
    pub fn request(&self, template_id: TemplateId) -> CompletionRequest {
        CompletionRequest {
            template_id,
            variables: BTreeMap::new(),
            decode: self.decode.clone(),
        }
    }
}
