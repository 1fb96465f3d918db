//! OpenAI-compatible chat-completions adapter.
//!
//! Each request becomes a single user message whose content array holds the
//! text parts and `data:` URL image parts in their original order.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

use base64::Engine as _;
use serde_json::{json, Value};

use super::{record_exchange, LmmBackend, LmmBackendDescriptor, LmmError};
use crate::templates::{LmmMessagePart, LmmRequest};

/// JSON body for `POST {endpoint}/chat/completions`.
pub fn build_request_body(model: &str, request: &LmmRequest) -> Value {
    let content: Vec<Value> = request
        .parts
        .iter()
        .map(|part| match part {
            LmmMessagePart::Text(text) => json!({ "type": "text", "text": text }),
            LmmMessagePart::Image(asset) => {
                let data = base64::engine::general_purpose::STANDARD.encode(asset.bytes());
                json!({
                    "type": "image_url",
                    "image_url": { "url": format!("data:{};base64,{data}", asset.media_type().mime()) }
                })
            }
        })
        .collect();
    json!({
        "model": model,
        "messages": [{ "role": "user", "content": content }],
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
    })
}

/// Extracts the assistant text from a chat-completions response body.
///
/// Empty or filtered answers surface as [`LmmError::Refusal`].
pub fn parse_response_body(body: &str) -> Result<String, LmmError> {
    let value: Value = serde_json::from_str(body).map_err(|e| LmmError::BadResponse(e.to_string()))?;
    if let Some(usage) = value.get("usage") {
        tracing::debug!(%usage, "backend usage");
    }
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| LmmError::BadResponse("response has no choices".into()))?;
    let message = choice
        .get("message")
        .ok_or_else(|| LmmError::BadResponse("choice has no message".into()))?;
    if let Some(refusal) = message.get("refusal").and_then(Value::as_str) {
        return Err(LmmError::Refusal(refusal.to_owned()));
    }
    if choice.get("finish_reason").and_then(Value::as_str) == Some("content_filter") {
        return Err(LmmError::Refusal("content filtered".into()));
    }
    let text = match message.get("content") {
        Some(Value::String(s)) => s.clone(),
        // Some servers return content as an array of text parts.
        Some(Value::Array(parts)) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        Some(Value::Null) | None => String::new(),
        Some(other) => return Err(LmmError::BadResponse(format!("unexpected content {other}"))),
    };
    if text.trim().is_empty() {
        return Err(LmmError::Refusal("empty answer".into()));
    }
    Ok(text)
}

fn classify_status(status: u16, body: String) -> LmmError {
    match status {
        401 | 403 => LmmError::Auth(body),
        408 | 429 | 500..=599 => LmmError::Transport(format!("HTTP {status}: {body}")),
        _ => LmmError::Rejected { status, body },
    }
}

pub struct OpenAiChatBackend {
    descriptor: LmmBackendDescriptor,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    record_dir: Option<PathBuf>,
    exchanges: AtomicU64,
}

impl OpenAiChatBackend {
    /// Resolves the API key from the descriptor's environment variable.
    pub fn from_env(descriptor: LmmBackendDescriptor) -> Result<Self, LmmError> {
        let api_key = match &descriptor.auth_env_var {
            Some(var) => {
                Some(std::env::var(var).map_err(|_| LmmError::Auth(format!("environment variable {var} is not set")))?)
            }
            None => None,
        };
        Self::with_api_key(descriptor, api_key)
    }

    pub fn with_api_key(descriptor: LmmBackendDescriptor, api_key: Option<String>) -> Result<Self, LmmError> {
        descriptor.validate().map_err(LmmError::Transport)?;
        let client = reqwest::blocking::Client::builder()
            .timeout(descriptor.timeout)
            .build()
            .map_err(|e| LmmError::Transport(e.to_string()))?;
        Ok(Self {
            descriptor,
            api_key,
            client,
            record_dir: None,
            exchanges: AtomicU64::new(0),
        })
    }

    /// Writes every successful exchange to `dir` as a fixture pair.
    pub fn recording_to(mut self, dir: impl Into<PathBuf>) -> Self {
        self.record_dir = Some(dir.into());
        self
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.descriptor.endpoint.trim_end_matches('/'))
    }
}

impl LmmBackend for OpenAiChatBackend {
    fn id(&self) -> &str {
        &self.descriptor.id
    }

    fn complete(&self, request: &LmmRequest) -> Result<String, LmmError> {
        let body = build_request_body(&self.descriptor.model_name, request);
        let mut call = self.client.post(self.url()).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let response = call.send().map_err(|e| LmmError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| LmmError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, text));
        }
        let answer = parse_response_body(&text)?;
        if let Some(dir) = &self.record_dir {
            let n = self.exchanges.fetch_add(1, Ordering::Relaxed);
            let name = format!("{}-{}-{n:04}", self.descriptor.id, request.purpose);
            if let Err(e) = record_exchange(dir, &name, &body, &text) {
                tracing::warn!(error = %e, "could not record exchange");
            }
        }
        Ok(answer)
    }
}
