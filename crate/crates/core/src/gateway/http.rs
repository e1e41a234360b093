//! OpenAI-compatible chat-completions adapter.
//!
//! GPT, Gemini (via its OpenAI-compatible endpoint) and DeepSeek all accept
//! this wire format. Reasoning and decoding options are merged into the
//! request body as given. The HTTP client itself needs the `http` feature.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{CompletionRequest, ErrorKind, ProviderError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// Base URL, e.g. `https://api.openai.com/v1`.
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    600
}

pub fn build_chat_body(request: &CompletionRequest) -> Value {
    let mut messages = Vec::new();
    if !request.system_text.is_empty() {
        messages.push(json!({"role": "system", "content": request.system_text}));
    }
    messages.push(json!({"role": "user", "content": request.user_text}));
    let mut body = Map::new();
    body.insert("model".into(), Value::from(request.model.model_id.clone()));
    body.insert("messages".into(), Value::Array(messages));
    for (k, v) in request.model.reasoning_options.iter().chain(request.decoding.iter()) {
        body.insert(k.clone(), v.clone());
    }
    Value::Object(body)
}

/// `(text, input_tokens, output_tokens)` from a chat-completions response.
pub fn parse_chat_response(body: &Value) -> Result<(String, u64, u64), ProviderError> {
    let text = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ProviderError::new(ErrorKind::Fatal, "response has no choices[0].message.content"))?;
    let tokens = |key: &str| body.pointer(&format!("/usage/{key}")).and_then(Value::as_u64).unwrap_or(0);
    Ok((text.to_owned(), tokens("prompt_tokens"), tokens("completion_tokens")))
}

pub fn classify_status(status: u16) -> ErrorKind {
    match status {
        429 => ErrorKind::RateLimited,
        408 | 500..=599 => ErrorKind::Transport,
        _ => ErrorKind::Fatal,
    }
}

#[cfg(feature = "http")]
pub struct OpenAiCompatible {
    config: ProviderConfig,
    client: reqwest::blocking::Client,
}

#[cfg(feature = "http")]
impl OpenAiCompatible {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::new(ErrorKind::Fatal, e.to_string()))?;
        Ok(OpenAiCompatible { config, client })
    }
}

#[cfg(feature = "http")]
impl super::Provider for OpenAiCompatible {
    fn complete(&self, request: &CompletionRequest) -> Result<super::CompletionResponse, ProviderError> {
        let key = std::env::var(&self.config.api_key_env).map_err(|_| {
            ProviderError::new(
                ErrorKind::Fatal,
                format!("environment variable {} is not set", self.config.api_key_env),
            )
        })?;
        let url = format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'));
        let started = std::time::Instant::now();
        let resp = self
            .client
            .post(url)
            .bearer_auth(key)
            .json(&build_chat_body(request))
            .send()
            .map_err(|e| ProviderError::new(ErrorKind::Transport, e.to_string()))?;
        let status = resp.status().as_u16();
        let body: Value = resp
            .json()
            .map_err(|e| ProviderError::new(ErrorKind::Transport, e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(ProviderError::new(classify_status(status), format!("HTTP {status}: {body}")));
        }
        let (text, input_tokens, output_tokens) = parse_chat_response(&body)?;
        Ok(super::CompletionResponse {
            text,
            input_tokens,
            output_tokens,
            latency_secs: started.elapsed().as_secs_f64(),
        })
    }
}
