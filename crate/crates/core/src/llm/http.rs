use std::time::Duration;

use serde_json::json;

use super::{ChatProvider, CompletionRequest, OutputConstraint, ProviderError};

pub const API_KEY_ENV: &str = "PROVIDER_API_KEY";
pub const BASE_URL_ENV: &str = "PROVIDER_BASE_URL";

/// OpenAI-compatible `/chat/completions` endpoint.
pub struct HttpProvider {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: Option<String>,
    structured: bool,
}

impl std::fmt::Debug for HttpProvider {
    // the key is deliberately left out
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("base_url", &self.base_url)
            .field("has_api_key", &self.api_key.is_some())
            .finish()
    }
}

impl HttpProvider {
    pub fn new(
        base_url: impl Into<String>,
        api_key: Option<String>,
    ) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            structured: true,
        })
    }

    /// Configure from `PROVIDER_BASE_URL` and `PROVIDER_API_KEY`.
    pub fn from_env() -> Result<Self, ProviderError> {
        let base =
            std::env::var(BASE_URL_ENV).unwrap_or_else(|_| "https://api.openai.com/v1".to_string());
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(base, key)
    }

    /// Disable `response_format` for endpoints that reject it.
    pub fn without_structured_output(mut self) -> Self {
        self.structured = false;
        self
    }

    fn body(
        &self,
        req: &CompletionRequest,
        format: Option<&OutputConstraint>,
    ) -> serde_json::Value {
        let mut body = json!({
            "model": req.model,
            "messages": req.messages,
            "max_tokens": req.max_tokens,
        });
        if let Some(t) = req.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(c) = format {
            body["response_format"] = json!({
                "type": "json_schema",
                "json_schema": {"name": "answer", "strict": true, "schema": c.json_schema()},
            });
        }
        body
    }
}

impl ChatProvider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn supports_structured_output(&self) -> bool {
        self.structured
    }

    fn send(
        &self,
        req: &CompletionRequest,
        format: Option<&OutputConstraint>,
    ) -> Result<String, ProviderError> {
        let mut call = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .json(&self.body(req, format));
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call
            .send()
            .map_err(|e| ProviderError::Transport(e.without_url().to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| ProviderError::Transport(e.without_url().to_string()))?;
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(ProviderError::Auth(format!("status {status}")));
        }
        if status.as_u16() == 408 || status.as_u16() == 429 || status.is_server_error() {
            return Err(ProviderError::Transport(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(ProviderError::Refusal(format!(
                "status {status}: {}",
                truncate(&text)
            )));
        }
        parse_response(&text)
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(200).collect()
}

fn parse_response(text: &str) -> Result<String, ProviderError> {
    let v: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| ProviderError::Transport(format!("malformed response: {e}")))?;
    let choice = &v["choices"][0];
    let message = &choice["message"];
    if let Some(refusal) = message["refusal"].as_str() {
        return Err(ProviderError::Refusal(refusal.to_string()));
    }
    if choice["finish_reason"].as_str() == Some("content_filter") {
        return Err(ProviderError::Refusal("content filter".into()));
    }
    message["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| ProviderError::Transport("response has no message content".into()))
}
