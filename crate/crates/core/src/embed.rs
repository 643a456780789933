//! Title embeddings for reliability scoring.
//!
//! [`TrigramEmbedder`] is the offline provider: case-folded character
//! trigram counts hashed into 1024 bins and L2-normalized. [`RemoteEmbedder`]
//! calls an OpenAI-compatible embeddings endpoint.

use std::collections::HashMap;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::llmio::http::JsonPoster;
use crate::llmio::RetryPolicy;

pub const TRIGRAM_DIM: usize = 1024;
/// Mixed into every trigram hash before its bytes.
pub const TRIGRAM_HASH_SEED: u64 = 0x4c4c_4d53_6552_0001;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    /// Scales to unit length; the zero vector stays zero.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Self { values }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Cosine similarity; zero when either operand has zero norm.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::OutOfRange(format!(
            "cosine of vectors with dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub trait TitleEmbedder: Send + Sync {
    fn embed_title(&self, text: &str) -> Result<EmbeddingVector>;
    fn name(&self) -> String;
}

fn require_text(text: &str) -> Result<&str> {
    let t = text.trim();
    if t.is_empty() {
        return Err(Error::InvalidItem("cannot embed an empty title".into()));
    }
    Ok(t)
}

/// Case-folded character trigrams of the trimmed text, in order.
pub fn trigrams(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.trim().chars().flat_map(char::to_lowercase).collect();
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

pub fn trigram_bin(trigram: &str) -> usize {
    let mut h = FNV_OFFSET;
    for b in TRIGRAM_HASH_SEED.to_le_bytes().into_iter().chain(trigram.bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    (h % TRIGRAM_DIM as u64) as usize
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TrigramEmbedder;

impl TitleEmbedder for TrigramEmbedder {
    fn embed_title(&self, text: &str) -> Result<EmbeddingVector> {
        let text = require_text(text)?;
        let mut bins = vec![0.0; TRIGRAM_DIM];
        for t in trigrams(text) {
            bins[trigram_bin(&t)] += 1.0;
        }
        Ok(EmbeddingVector::normalized(bins))
    }

    fn name(&self) -> String {
        "trigram".into()
    }
}

/// OpenAI-compatible `/embeddings` client with an in-memory memo.
pub struct RemoteEmbedder {
    poster: JsonPoster,
    model: String,
    policy: RetryPolicy,
    memo: RwLock<HashMap<String, EmbeddingVector>>,
}

impl RemoteEmbedder {
    pub fn new(url: &str, model: &str, api_key_env: &str, policy: RetryPolicy) -> Result<Self> {
        Ok(Self {
            poster: JsonPoster::new(url, api_key_env)?,
            model: model.to_string(),
            policy,
            memo: RwLock::new(HashMap::new()),
        })
    }
}

fn extract_embedding(body: &Value) -> std::result::Result<Vec<f64>, String> {
    let arr = body
        .pointer("/data/0/embedding")
        .and_then(Value::as_array)
        .ok_or("response has no data[0].embedding")?;
    arr.iter()
        .map(|v| v.as_f64().ok_or_else(|| "non-numeric embedding entry".to_string()))
        .collect()
}

impl TitleEmbedder for RemoteEmbedder {
    fn embed_title(&self, text: &str) -> Result<EmbeddingVector> {
        let text = require_text(text)?;
        if let Some(v) = self.memo.read().get(text) {
            return Ok(v.clone());
        }
        let body = json!({"model": self.model, "input": text});
        let (values, _) = self
            .policy
            .run(|| self.poster.post(&body).and_then(|r| extract_embedding(&r)))?;
        let v = EmbeddingVector::normalized(values);
        self.memo.write().insert(text.to_string(), v.clone());
        Ok(v)
    }

    fn name(&self) -> String {
        format!("remote:{}", self.model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    /// `trigram` or `remote`.
    pub provider: String,
    pub endpoint_url: String,
    pub model_name: String,
    pub api_key_env: String,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            provider: "trigram".into(),
            endpoint_url: "http://localhost:8000/v1/embeddings".into(),
            model_name: "bert-base-uncased".into(),
            api_key_env: "LLMSER_API_KEY".into(),
        }
    }
}

impl EmbedderConfig {
    pub fn build(&self, policy: RetryPolicy) -> Result<Box<dyn TitleEmbedder>> {
        match self.provider.as_str() {
            "trigram" => Ok(Box::new(TrigramEmbedder)),
            "remote" => Ok(Box::new(RemoteEmbedder::new(
                &self.endpoint_url,
                &self.model_name,
                &self.api_key_env,
                policy,
            )?)),
            other => Err(Error::Config(format!("unknown embedder provider `{other}`"))),
        }
    }
}
