//! LLM access: prompt dispatch with a persistent response cache, bounded
//! concurrency, retries with exponential backoff, and deterministic mocks.
//!
//! The remote side is abstracted behind [`Transport`]; the HTTP transport
//! speaks the OpenAI-compatible chat-completions format.

pub mod cache;
pub mod http;
pub mod mock;
pub mod parse;
pub mod prompt;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::{CacheEntry, ResponseCache};
pub use mock::{mock_adversarial, mock_first_k, mock_oracle, TruthFn};
pub use parse::{parse_selection, parse_selection_with_titles, Selection};
pub use prompt::{PromptKind, PromptView};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_retries: usize,
    /// Seconds; attempt `i` waits `backoff_base * 2^i` before retrying.
    pub backoff_base: f64,
    pub concurrency_limit: usize,
    pub cache_path: Option<PathBuf>,
    /// Environment variable holding the API key.
    pub api_key_env: String,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://localhost:8000/v1/chat/completions".into(),
            model_name: "glm-4-flash".into(),
            temperature: 0.0,
            max_retries: 3,
            backoff_base: 1.0,
            concurrency_limit: 4,
            cache_path: None,
            api_key_env: "LLMSER_API_KEY".into(),
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.concurrency_limit == 0 {
            return Err(Error::Config("llm.concurrency_limit must be at least 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::Config("llm.temperature must be non-negative".into()));
        }
        if !(self.backoff_base >= 0.0) {
            return Err(Error::Config("llm.backoff_base must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Chat-completions request body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn user(model: &str, prompt: &str, temperature: f64) -> Self {
        Self {
            model: model.to_string(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt.to_string(),
            }],
            temperature,
        }
    }

    /// Content of the last user message.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

/// A remote completion endpoint. Errors are retried by the client.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> std::result::Result<String, String>;
}

/// Retry schedule shared by chat and embedding calls.
#[derive(Clone, Copy, Debug)]
pub struct RetryPolicy {
    pub max_retries: usize,
    pub backoff_base: f64,
}

impl RetryPolicy {
    /// Runs `call` until it succeeds or `max_retries` retries are spent.
    /// Returns the value and the number of attempts made.
    pub fn run<T>(
        &self,
        mut call: impl FnMut() -> std::result::Result<T, String>,
    ) -> Result<(T, usize)> {
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            match call() {
                Ok(v) => return Ok((v, attempt + 1)),
                Err(e) => {
                    log::warn!("llm call attempt {} failed: {e}", attempt + 1);
                    last = e;
                    if attempt < self.max_retries && self.backoff_base > 0.0 {
                        let wait = self.backoff_base * 2f64.powi(attempt as i32);
                        thread::sleep(Duration::from_secs_f64(wait));
                    }
                }
            }
        }
        Err(Error::Transport {
            attempts: self.max_retries + 1,
            message: last,
        })
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cv.wait(&mut free);
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cv.notify_one();
    }
}

/// Cached, retrying, concurrency-bounded completion client.
pub struct LlmClient {
    cfg: LlmConfig,
    transport: Box<dyn Transport>,
    cache: Option<ResponseCache>,
    permits: Semaphore,
    remote_attempts: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl LlmClient {
    pub fn new(cfg: LlmConfig, transport: Box<dyn Transport>) -> Result<Self> {
        cfg.validate()?;
        let cache = match &cfg.cache_path {
            Some(p) => Some(ResponseCache::open(p)?),
            None => None,
        };
        Ok(Self {
            permits: Semaphore::new(cfg.concurrency_limit),
            cfg,
            transport,
            cache,
            remote_attempts: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        })
    }

    /// Client for the configured HTTP endpoint.
    pub fn http(cfg: LlmConfig) -> Result<Self> {
        let transport = http::HttpTransport::new(&cfg.endpoint_url, &cfg.api_key_env)?;
        Self::new(cfg, Box::new(transport))
    }

    pub fn config(&self) -> &LlmConfig {
        &self.cfg
    }

    /// Cache key: hex SHA-256 over model name and prompt.
    pub fn cache_key(&self, prompt: &str) -> String {
        cache_key(&self.cfg.model_name, prompt)
    }

    pub fn complete(&self, prompt: &str) -> Result<String> {
        if prompt.trim().is_empty() {
            return Err(Error::OutOfRange("empty prompt".into()));
        }
        let key = self.cache_key(prompt);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        let request = ChatRequest::user(&self.cfg.model_name, prompt, self.cfg.temperature);
        let policy = RetryPolicy {
            max_retries: self.cfg.max_retries,
            backoff_base: self.cfg.backoff_base,
        };
        let result = {
            let _permit = self.permits.acquire();
            policy.run(|| {
                self.remote_attempts.fetch_add(1, Ordering::Relaxed);
                self.transport.send(&request)
            })
        };
        let (response, _) = result?;
        if let Some(cache) = &self.cache {
            cache.put(&key, &response)?;
        }
        Ok(response)
    }

    /// Total transport attempts, including failed ones.
    pub fn remote_attempts(&self) -> usize {
        self.remote_attempts.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> usize {
        self.cache_hits.load(Ordering::Relaxed)
    }
}

pub fn cache_key(model_name: &str, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(model_name.as_bytes());
    h.update([0u8]);
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

/// Hex SHA-256 of a prompt, recorded alongside augmentation output.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    /// Fails a fixed number of times, then echoes.
    struct Flaky {
        failures: AtomicUsize,
        calls: Arc<AtomicUsize>,
    }

    impl Transport for Flaky {
        fn send(&self, request: &ChatRequest) -> std::result::Result<String, String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                return Err("503 service unavailable".into());
            }
            Ok(format!("echo:{}", request.prompt().len()))
        }
    }

    fn flaky(failures: usize) -> (Box<dyn Transport>, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        (
            Box::new(Flaky {
                failures: AtomicUsize::new(failures),
                calls: calls.clone(),
            }),
            calls,
        )
    }

    fn cfg(max_retries: usize) -> LlmConfig {
        LlmConfig {
            max_retries,
            backoff_base: 0.0,
            ..LlmConfig::default()
        }
    }

    #[test]
    fn retries_until_success() {
        let (t, calls) = flaky(2);
        let client = LlmClient::new(cfg(3), t).unwrap();
        assert_eq!(client.complete("hello").unwrap(), "echo:5");
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        assert_eq!(client.remote_attempts(), 3);
    }

    #[test]
    fn exhausted_retries_surface_transport_error() {
        let (t, calls) = flaky(usize::MAX / 2);
        let client = LlmClient::new(cfg(0), t).unwrap();
        let err = client.complete("hello").unwrap_err();
        assert!(matches!(err, Error::Transport { attempts: 1, .. }));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn second_identical_call_is_cached() {
        let dir = tempfile::tempdir().unwrap();
        let (t, calls) = flaky(0);
        let client = LlmClient::new(
            LlmConfig {
                cache_path: Some(dir.path().join("cache.jsonl")),
                ..cfg(0)
            },
            t,
        )
        .unwrap();
        let a = client.complete("same prompt").unwrap();
        let b = client.complete("same prompt").unwrap();
        assert_eq!(a, b);
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(client.cache_hits(), 1);
    }

    #[test]
    fn cache_key_depends_on_model() {
        assert_ne!(cache_key("a", "p"), cache_key("b", "p"));
        assert_eq!(cache_key("a", "p"), cache_key("a", "p"));
        assert_eq!(prompt_hash("x").len(), 64);
    }

    #[test]
    fn empty_prompt_rejected() {
        let (t, _) = flaky(0);
        let client = LlmClient::new(cfg(0), t).unwrap();
        assert!(client.complete("   ").is_err());
    }

    #[test]
    fn zero_concurrency_is_a_config_error() {
        let (t, _) = flaky(0);
        let bad = LlmConfig {
            concurrency_limit: 0,
            ..cfg(0)
        };
        assert!(matches!(LlmClient::new(bad, t), Err(Error::Config(_))));
    }
}
