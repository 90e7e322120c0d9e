use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatRequest, LlmClient};
use crate::error::{Error, Result};

pub const ENV_ENDPOINT: &str = "AGENTGEO_LLM_ENDPOINT";
pub const ENV_KEY: &str = "AGENTGEO_LLM_KEY";
pub const ENV_MODEL: &str = "AGENTGEO_LLM_MODEL";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub retries: u32,
    pub backoff: Duration,
}

impl HttpConfig {
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT).map_err(|_| Error::Config(format!("{ENV_ENDPOINT} is not set")))?;
        Ok(HttpConfig {
            endpoint,
            api_key: std::env::var(ENV_KEY).ok(),
            model: std::env::var(ENV_MODEL).unwrap_or_default(),
            timeout: Duration::from_secs(120),
            retries: 3,
            backoff: Duration::from_secs(1),
        })
    }
}

/// Chat-completion client for any endpoint speaking the
/// `{model, messages:[{role, content}]}` request shape.
pub struct HttpLlm {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpLlm {
    pub fn new(config: HttpConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(HttpLlm { config, client })
    }

    pub fn from_env() -> Result<Self> {
        Self::new(HttpConfig::from_env()?)
    }

    fn body(&self, req: &ChatRequest) -> Value {
        let mut messages = Vec::new();
        if !req.system.is_empty() {
            messages.push(json!({"role": "system", "content": req.system}));
        }
        messages.push(json!({"role": "user", "content": req.user}));
        json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        })
    }

    fn attempt(&self, body: &Value) -> std::result::Result<String, (bool, String)> {
        let mut call = self.client.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.config.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err((true, format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err((false, format!("HTTP {status}")));
        }
        let value: Value = resp.json().map_err(|e| (true, e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| (false, "response has no choices[0].message.content".to_string()))
    }
}

impl LlmClient for HttpLlm {
    fn complete(&self, req: &ChatRequest) -> Result<String> {
        let body = self.body(req);
        let mut delay = self.config.backoff;
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((retryable, msg)) => {
                    tracing::warn!(tag = %req.tag, attempt, "LLM request failed: {msg}");
                    last = msg;
                    if !retryable || attempt == self.config.retries {
                        break;
                    }
                    std::thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
        Err(Error::Transport(last))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let llm = HttpLlm::new(HttpConfig {
            endpoint: "http://127.0.0.1:9/v1/chat/completions".into(),
            api_key: None,
            model: "m".into(),
            timeout: Duration::from_millis(200),
            retries: 1,
            backoff: Duration::from_millis(1),
        })
        .unwrap();
        let err = llm.complete(&ChatRequest::new("t", "s", "u")).unwrap_err();
        assert!(matches!(err, Error::Transport(_)));
        assert!(err.is_fatal());
    }

    #[test]
    fn request_shape() {
        let llm = HttpLlm::new(HttpConfig {
            endpoint: "http://localhost".into(),
            api_key: None,
            model: "m".into(),
            timeout: Duration::from_secs(1),
            retries: 0,
            backoff: Duration::ZERO,
        })
        .unwrap();
        let body = llm.body(&ChatRequest::new("t", "sys", "hi"));
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "hi");
        assert_eq!(body["temperature"], 0.0);
    }
}
