//! Pseudo-prior item generation: a reverse-trained candidate generator
//! proposes items that may precede a user's history and the LLM keeps the
//! ones that fit.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{Direction, TrainedBackbone};
use crate::catalog::{reverse_sequence, Catalog, UserSequence};
use crate::error::{Error, Result};
use crate::llmio::{parse_selection_with_titles, prompt, prompt_hash, LlmClient};
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub item_id: String,
    pub title: String,
    /// 1-based.
    pub rank: usize,
}

/// Ranked candidate list for one user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub user_id: String,
    pub entries: Vec<PoolEntry>,
}

impl CandidatePool {
    pub fn from_items(catalog: &Catalog, user_id: &str, items: Vec<String>) -> Result<Self> {
        let entries = items
            .into_iter()
            .enumerate()
            .map(|(i, item_id)| {
                let title = catalog
                    .title(&item_id)
                    .ok_or_else(|| Error::UnknownItem(item_id.clone()))?
                    .to_string();
                Ok(PoolEntry {
                    item_id,
                    title,
                    rank: i + 1,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            user_id: user_id.to_string(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn item_ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.item_id.clone()).collect()
    }

    pub fn titles(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.title.as_str()).collect()
    }

    /// Item at a 1-based rank.
    pub fn at(&self, rank: usize) -> &str {
        &self.entries[rank - 1].item_id
    }
}

/// A sequence with pseudo-prior items in front of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedSequence {
    pub user_id: String,
    pub pseudo_items: Vec<String>,
    pub original: UserSequence,
    pub reliability: Option<f64>,
    pub weight: Option<f64>,
}

impl AugmentedSequence {
    pub fn combined(&self) -> UserSequence {
        let mut items = self.pseudo_items.clone();
        items.extend(self.original.items.iter().cloned());
        UserSequence::new(self.user_id.clone(), items)
    }
}

pub(crate) fn require_direction(model: &TrainedBackbone, expected: Direction) -> Result<()> {
    if model.direction != expected {
        return Err(Error::Direction {
            expected: expected.as_str(),
            actual: model.direction.as_str(),
        });
    }
    Ok(())
}

/// Top-`n` items of the reverse model given the reversed history, with the
/// history itself excluded.
pub fn generate_candidate_pool(
    ccg: &TrainedBackbone,
    catalog: &Catalog,
    s: &UserSequence,
    n: usize,
) -> Result<CandidatePool> {
    require_direction(ccg, Direction::Reverse)?;
    let exclude: HashSet<String> = s.items.iter().cloned().collect();
    let items = ccg.top_k(s, n, &exclude)?;
    CandidatePool::from_items(catalog, &s.user_id, items)
}

/// `n` distinct non-history items drawn uniformly (candidate generator
/// ablation).
pub fn random_pool(
    catalog: &Catalog,
    s: &UserSequence,
    n: usize,
    seed: u64,
) -> Result<CandidatePool> {
    let exclude: HashSet<&str> = s.items.iter().map(String::as_str).collect();
    let avail: Vec<String> = catalog
        .items()
        .iter()
        .filter(|it| !exclude.contains(it.item_id.as_str()))
        .map(|it| it.item_id.clone())
        .collect();
    if n == 0 || n > avail.len() {
        return Err(Error::TooManyRequested {
            k: n,
            available: avail.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &s.user_id));
    let items = avail.choose_multiple(&mut rng, n).cloned().collect();
    CandidatePool::from_items(catalog, &s.user_id, items)
}

fn titles_of<'a>(catalog: &'a Catalog, items: &[String]) -> Result<Vec<&'a str>> {
    items
        .iter()
        .map(|i| catalog.title(i).ok_or_else(|| Error::UnknownItem(i.clone())))
        .collect()
}

/// Renders the filtering prompt. `s_rev` is the history newest first.
pub fn build_sia_prompt(
    catalog: &Catalog,
    s_rev: &UserSequence,
    pool: &CandidatePool,
    m: usize,
) -> Result<String> {
    let history = titles_of(catalog, &s_rev.items)?;
    prompt::render_augment(&s_rev.user_id, &history, &pool.titles(), m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Filtered {
    pub items: Vec<String>,
    pub prompt_hash: String,
    pub fallback_used: bool,
}

/// Asks the LLM to keep `m` pool items. The first selected item becomes the
/// oldest pseudo-prior interaction.
pub fn filter_candidates(
    llm: &LlmClient,
    catalog: &Catalog,
    s: &UserSequence,
    pool: &CandidatePool,
    m: usize,
) -> Result<Filtered> {
    if m == 0 || pool.len() < m {
        return Err(Error::TooManyRequested {
            k: m,
            available: pool.len(),
        });
    }
    let text = build_sia_prompt(catalog, &reverse_sequence(s), pool, m)?;
    let response = llm.complete(&text)?;
    let sel = parse_selection_with_titles(&response, &pool.titles(), m);
    Ok(Filtered {
        items: sel.indices.iter().map(|&r| pool.at(r).to_string()).collect(),
        prompt_hash: prompt_hash(&text),
        fallback_used: sel.fallback_used,
    })
}

pub fn augment_sequence(
    catalog: &Catalog,
    s: &UserSequence,
    pseudo: &[String],
) -> Result<AugmentedSequence> {
    if let Some(bad) = pseudo.iter().find(|p| !catalog.contains(p)) {
        return Err(Error::UnknownItem(bad.clone()));
    }
    Ok(AugmentedSequence {
        user_id: s.user_id.clone(),
        pseudo_items: pseudo.to_vec(),
        original: s.clone(),
        reliability: None,
        weight: None,
    })
}

/// One line of the augmentation output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub user_id: String,
    pub pseudo_items: Vec<String>,
    pub pool: Vec<String>,
    pub prompt_hash: String,
    pub fallback_used: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct SiaOptions {
    pub pool_size: usize,
    pub num_pseudo: usize,
    /// Replace the candidate generator with a uniform random pool.
    pub no_ccg: bool,
    /// Skip the LLM and keep the top-ranked pool items.
    pub no_snf: bool,
    pub seed: u64,
}

/// Augments every sequence. Pool and selection sizes shrink for users
/// whose history leaves fewer than `pool_size` items to choose from.
pub fn run_sia(
    ccg: &TrainedBackbone,
    llm: &LlmClient,
    catalog: &Catalog,
    sequences: &[UserSequence],
    opts: &SiaOptions,
) -> Result<Vec<AugmentationRecord>> {
    if opts.num_pseudo > opts.pool_size {
        return Err(Error::Config(format!(
            "M = {} exceeds the pool size N = {}",
            opts.num_pseudo, opts.pool_size
        )));
    }
    sequences
        .par_iter()
        .map(|s| augment_user(ccg, llm, catalog, s, opts))
        .collect()
}

fn augment_user(
    ccg: &TrainedBackbone,
    llm: &LlmClient,
    catalog: &Catalog,
    s: &UserSequence,
    opts: &SiaOptions,
) -> Result<AugmentationRecord> {
    let distinct: HashSet<&String> = s.items.iter().collect();
    let available = catalog.num_items() - distinct.len();
    let n = opts.pool_size.min(available);
    let m = opts.num_pseudo.min(n);
    if m == 0 {
        return Ok(AugmentationRecord {
            user_id: s.user_id.clone(),
            pseudo_items: Vec::new(),
            pool: Vec::new(),
            prompt_hash: String::new(),
            fallback_used: false,
        });
    }
    let pool = if opts.no_ccg {
        random_pool(catalog, s, n, opts.seed)?
    } else {
        generate_candidate_pool(ccg, catalog, s, n)?
    };
    let (pseudo, hash, fallback_used) = if opts.no_snf {
        (pool.item_ids()[..m].to_vec(), String::new(), false)
    } else {
        let f = filter_candidates(llm, catalog, s, &pool, m)?;
        (f.items, f.prompt_hash, f.fallback_used)
    };
    Ok(AugmentationRecord {
        user_id: s.user_id.clone(),
        pseudo_items: pseudo,
        pool: pool.item_ids(),
        prompt_hash: hash,
        fallback_used,
    })
}
