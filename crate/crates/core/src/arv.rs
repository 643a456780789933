//! Reliability of an augmented sequence: hide the newest real interaction,
//! let a forward model shortlist candidates and the LLM pick one, then
//! compare titles of the pick and the hidden item.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{Direction, TrainedBackbone};
use crate::catalog::{Catalog, UserSequence};
use crate::embed::{cosine, TitleEmbedder};
use crate::error::{Error, Result};
use crate::llmio::{parse_selection_with_titles, prompt, LlmClient};
use crate::sia::{random_pool, require_direction, AugmentedSequence, CandidatePool};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedInstance {
    pub user_id: String,
    /// Pseudo items followed by every real item except the last.
    pub masked_context: Vec<String>,
    pub masked_item: String,
    pub prediction: Option<String>,
    pub reliability: Option<f64>,
}

impl MaskedInstance {
    pub fn context(&self) -> UserSequence {
        UserSequence::new(self.user_id.clone(), self.masked_context.clone())
    }
}

pub fn mask_sequence(a: &AugmentedSequence) -> Result<MaskedInstance> {
    let (last, head) = a.original.items.split_last().ok_or(Error::EmptyContext)?;
    let mut masked_context = a.pseudo_items.clone();
    masked_context.extend(head.iter().cloned());
    Ok(MaskedInstance {
        user_id: a.user_id.clone(),
        masked_context,
        masked_item: last.clone(),
        prediction: None,
        reliability: None,
    })
}

/// Top-`h` items of the forward model on the masked context, context items
/// excluded.
pub fn generate_reason_pool(
    rcs: &TrainedBackbone,
    catalog: &Catalog,
    m: &MaskedInstance,
    h: usize,
) -> Result<CandidatePool> {
    require_direction(rcs, Direction::Forward)?;
    let ctx = m.context();
    if ctx.is_empty() {
        return Err(Error::EmptyContext);
    }
    let exclude: HashSet<String> = ctx.items.iter().cloned().collect();
    let items = rcs.top_k(&ctx, h, &exclude)?;
    CandidatePool::from_items(catalog, &m.user_id, items)
}

pub fn build_reason_prompt(
    catalog: &Catalog,
    m: &MaskedInstance,
    pool: &CandidatePool,
) -> Result<String> {
    let context = m
        .masked_context
        .iter()
        .map(|i| catalog.title(i).ok_or_else(|| Error::UnknownItem(i.clone())))
        .collect::<Result<Vec<_>>>()?;
    prompt::render_reason(&m.user_id, &context, &pool.titles())
}

/// The LLM's guess for the masked item and whether the parser fell back to
/// the rank-1 candidate.
pub fn reason_masked_item(
    llm: &LlmClient,
    catalog: &Catalog,
    m: &MaskedInstance,
    pool: &CandidatePool,
) -> Result<(String, bool)> {
    if pool.is_empty() {
        return Err(Error::TooManyRequested { k: 1, available: 0 });
    }
    let text = build_reason_prompt(catalog, m, pool)?;
    let response = llm.complete(&text)?;
    let sel = parse_selection_with_titles(&response, &pool.titles(), 1);
    Ok((pool.at(sel.indices[0]).to_string(), sel.fallback_used))
}

/// Cosine of the two title embeddings, clamped below at zero. Titles equal
/// up to case and surrounding whitespace score exactly 1.
pub fn score_reliability(
    embedder: &dyn TitleEmbedder,
    predicted_title: &str,
    masked_title: &str,
) -> Result<f64> {
    let (a, b) = (predicted_title.trim(), masked_title.trim());
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidItem("empty title".into()));
    }
    if a.to_lowercase() == b.to_lowercase() {
        return Ok(1.0);
    }
    let c = cosine(&embedder.embed_title(a)?, &embedder.embed_title(b)?)?;
    Ok(c.clamp(0.0, 1.0))
}

/// One line of the validation output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub user_id: String,
    pub masked_item: String,
    pub predicted_item: Option<String>,
    pub omega: f64,
    pub fallback_used: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct ArvOptions {
    pub pool_size: usize,
    /// Replace the forward model's shortlist with a uniform random pool.
    pub no_rcs: bool,
    /// Skip the LLM and take the shortlist's top item.
    pub no_reason: bool,
    pub seed: u64,
}

pub fn validate_one(
    rcs: &TrainedBackbone,
    llm: &LlmClient,
    embedder: &dyn TitleEmbedder,
    catalog: &Catalog,
    a: &AugmentedSequence,
    opts: &ArvOptions,
) -> Result<ValidationRecord> {
    let m = mask_sequence(a)?;
    let record = |predicted_item, omega, fallback_used| ValidationRecord {
        user_id: m.user_id.clone(),
        masked_item: m.masked_item.clone(),
        predicted_item,
        omega,
        fallback_used,
    };
    if m.masked_context.is_empty() {
        return Ok(record(None, 0.0, false));
    }
    let distinct: HashSet<&String> = m.masked_context.iter().collect();
    let h = opts.pool_size.min(catalog.num_items() - distinct.len());
    if h == 0 {
        return Ok(record(None, 0.0, false));
    }
    let pool = if opts.no_rcs {
        random_pool(catalog, &m.context(), h, opts.seed)?
    } else {
        generate_reason_pool(rcs, catalog, &m, h)?
    };
    let (predicted, fallback) = if opts.no_reason {
        (pool.at(1).to_string(), false)
    } else {
        reason_masked_item(llm, catalog, &m, &pool)?
    };
    let title = |i: &str| {
        catalog
            .title(i)
            .map(str::to_string)
            .ok_or_else(|| Error::UnknownItem(i.to_string()))
    };
    let omega = score_reliability(embedder, &title(&predicted)?, &title(&m.masked_item)?)?;
    Ok(record(Some(predicted), omega, fallback))
}

pub fn run_arv(
    rcs: &TrainedBackbone,
    llm: &LlmClient,
    embedder: &dyn TitleEmbedder,
    catalog: &Catalog,
    augmented: &[AugmentedSequence],
    opts: &ArvOptions,
) -> Result<Vec<ValidationRecord>> {
    augmented
        .par_iter()
        .map(|a| validate_one(rcs, llm, embedder, catalog, a, opts))
        .collect()
}
