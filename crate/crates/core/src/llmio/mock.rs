//! Deterministic stand-in transports.

use std::sync::Arc;

use super::prompt::PromptView;
use super::{ChatRequest, LlmClient, LlmConfig, Transport};
use crate::error::Result;

/// Ground-truth relevance of each candidate in a prompt, in pool order.
pub type TruthFn = Arc<dyn Fn(&PromptView) -> Vec<f64> + Send + Sync>;

fn render(indices: &[usize]) -> String {
    let parts: Vec<String> = indices.iter().map(usize::to_string).collect();
    format!("[{}]", parts.join(", "))
}

/// Always picks the lowest candidate numbers.
pub struct FirstK;

impl Transport for FirstK {
    fn send(&self, request: &ChatRequest) -> std::result::Result<String, String> {
        let want = PromptView::parse(request.prompt())
            .map(|v| v.want.min(v.candidates.len()).max(1))
            .unwrap_or(1);
        Ok(render(&(1..=want).collect::<Vec<_>>()))
    }
}

/// Picks the candidates with the highest truth scores, ties by pool order.
pub struct Oracle {
    truth: TruthFn,
}

impl Oracle {
    pub fn new(truth: TruthFn) -> Self {
        Self { truth }
    }
}

impl Transport for Oracle {
    fn send(&self, request: &ChatRequest) -> std::result::Result<String, String> {
        let Some(view) = PromptView::parse(request.prompt()) else {
            return Ok("I cannot parse this request.".into());
        };
        let scores = (self.truth)(&view);
        if scores.len() != view.candidates.len() {
            return Err(format!(
                "truth function scored {} of {} candidates",
                scores.len(),
                view.candidates.len()
            ));
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let picked: Vec<usize> = order.into_iter().take(view.want).map(|i| i + 1).collect();
        Ok(render(&picked))
    }
}

fn mock_config() -> LlmConfig {
    LlmConfig {
        model_name: "mock".into(),
        max_retries: 0,
        backoff_base: 0.0,
        ..LlmConfig::default()
    }
}

pub fn mock_first_k() -> LlmClient {
    mock_first_k_with(mock_config()).expect("default mock config is valid")
}

pub fn mock_first_k_with(cfg: LlmConfig) -> Result<LlmClient> {
    LlmClient::new(cfg, Box::new(FirstK))
}

pub fn mock_oracle(truth: TruthFn) -> LlmClient {
    mock_oracle_with(mock_config(), truth).expect("default mock config is valid")
}

pub fn mock_oracle_with(cfg: LlmConfig, truth: TruthFn) -> Result<LlmClient> {
    LlmClient::new(cfg, Box::new(Oracle::new(truth)))
}

/// Oracle with negated relevance: selects the least relevant candidates.
pub fn mock_adversarial(truth: TruthFn) -> LlmClient {
    mock_oracle(negate(truth))
}

pub fn negate(truth: TruthFn) -> TruthFn {
    Arc::new(move |v: &PromptView| truth(v).into_iter().map(|s| -s).collect())
}
