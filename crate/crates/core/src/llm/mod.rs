//! Chat-completion boundary.

mod cache;
mod http;
mod scripted;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use cache::CachedLlm;
pub use http::{HttpConfig, HttpLlm, ENV_ENDPOINT, ENV_KEY, ENV_MODEL};
pub use scripted::{ScriptEntry, ScriptedLlm};

pub const DEFAULT_MAX_TOKENS: u32 = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub temperature: f32,
    pub max_tokens: u32,
    /// Caller role, e.g. `diagnosis` or `tool:entity_injection`.
    pub tag: String,
}

impl ChatRequest {
    pub fn new(tag: impl Into<String>, system: impl Into<String>, user: impl Into<String>) -> Self {
        ChatRequest {
            system: system.into(),
            user: user.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            tag: tag.into(),
        }
    }
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<String>;
}

impl<T: LlmClient + ?Sized> LlmClient for &T {
    fn complete(&self, req: &ChatRequest) -> Result<String> {
        (**self).complete(req)
    }
}

impl<T: LlmClient + ?Sized> LlmClient for Box<T> {
    fn complete(&self, req: &ChatRequest) -> Result<String> {
        (**self).complete(req)
    }
}

impl<T: LlmClient + ?Sized> LlmClient for std::sync::Arc<T> {
    fn complete(&self, req: &ChatRequest) -> Result<String> {
        (**self).complete(req)
    }
}
