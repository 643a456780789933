//! OpenAI-compatible HTTP transport.

use std::time::Duration;

use serde_json::Value;

use super::{ChatRequest, Transport};
use crate::error::{Error, Result};

/// Blocking JSON POST with optional bearer auth from an environment variable.
pub struct JsonPoster {
    client: reqwest::blocking::Client,
    url: String,
    api_key_env: String,
}

impl JsonPoster {
    pub fn new(url: &str, api_key_env: &str) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            client,
            url: url.to_string(),
            api_key_env: api_key_env.to_string(),
        })
    }

    pub fn post(&self, body: &Value) -> std::result::Result<Value, String> {
        let mut req = self.client.post(&self.url).json(body);
        if let Ok(key) = std::env::var(&self.api_key_env) {
            if !key.is_empty() {
                req = req.bearer_auth(key);
            }
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status();
        let text = resp.text().map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("HTTP {status}: {}", truncate(&text, 200)));
        }
        serde_json::from_str(&text).map_err(|e| format!("invalid JSON response: {e}"))
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

pub struct HttpTransport {
    poster: JsonPoster,
}

impl HttpTransport {
    pub fn new(endpoint_url: &str, api_key_env: &str) -> Result<Self> {
        Ok(Self {
            poster: JsonPoster::new(endpoint_url, api_key_env)?,
        })
    }
}

/// Text of the first choice's message.
pub fn extract_content(body: &Value) -> std::result::Result<String, String> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| "response has no choices[0].message.content".to_string())
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> std::result::Result<String, String> {
        let body = serde_json::to_value(request).map_err(|e| e.to_string())?;
        let resp = self.poster.post(&body)?;
        extract_content(&resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn extracts_first_choice() {
        let body = json!({"choices": [{"message": {"role": "assistant", "content": "[2, 1]"}}]});
        assert_eq!(extract_content(&body).unwrap(), "[2, 1]");
        assert!(extract_content(&json!({"choices": []})).is_err());
    }

    #[test]
    fn request_body_shape() {
        let r = ChatRequest::user("glm-4-flash", "hi", 0.0);
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(
            v,
            json!({"model": "glm-4-flash", "messages": [{"role": "user", "content": "hi"}], "temperature": 0.0})
        );
    }
}
