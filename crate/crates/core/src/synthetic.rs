//! Synthetic interaction logs with latent user interests, and the matching
//! ground-truth relevance used by oracle mock LLMs.
//!
//! Every item belongs to one topic; its title is a topic-specific word
//! followed by the topic noun. A user draws one latent topic and walks a
//! Markov chain over items: mostly to a random item of the topic, sometimes
//! to the next item of the topic, occasionally anywhere. Users in the tail
//! cohort keep only their last few interactions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{write_jsonl, Catalog, DatasetSplit, Interaction, Item};
use crate::error::{Error, Result};
use crate::llmio::{PromptKind, PromptView, TruthFn};

const TOPICS: [(&str, [&str; 10]); 6] = [
    (
        "garment",
        ["velvet", "linen", "denim", "tweed", "satin", "fleece", "cashmere", "chiffon", "corduroy", "muslin"],
    ),
    (
        "novel",
        ["mystery", "romance", "thriller", "fantasy", "memoir", "saga", "fable", "epic", "chronicle", "parable"],
    ),
    (
        "cookware",
        ["wok", "griddle", "ladle", "whisk", "colander", "spatula", "kettle", "steamer", "grater", "mortar"],
    ),
    (
        "bouquet",
        ["tulip", "orchid", "fern", "lily", "daisy", "ivy", "lotus", "peony", "begonia", "jasmine"],
    ),
    (
        "trailgear",
        ["backpack", "compass", "lantern", "tent", "canteen", "hammock", "carabiner", "poncho", "gaiter", "bivouac"],
    ),
    (
        "instrument",
        ["violin", "cello", "banjo", "ukulele", "harp", "flute", "oboe", "bugle", "zither", "mandolin"],
    ),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub num_users: usize,
    /// At most 6.
    pub num_topics: usize,
    /// At most 10.
    pub items_per_topic: usize,
    pub min_length: usize,
    pub max_length: usize,
    pub tail_fraction: f64,
    pub tail_min_visible: usize,
    pub tail_max_visible: usize,
    pub p_next: f64,
    pub p_topic: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_users: 200,
            num_topics: 6,
            items_per_topic: 10,
            min_length: 8,
            max_length: 12,
            tail_fraction: 0.4,
            tail_min_visible: 1,
            tail_max_visible: 3,
            p_next: 0.1,
            p_topic: 0.7,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic: {m}")));
        if self.num_topics == 0 || self.num_topics > TOPICS.len() {
            return bad("num_topics must be in 1..=6");
        }
        if self.items_per_topic < 2 || self.items_per_topic > 10 {
            return bad("items_per_topic must be in 2..=10");
        }
        if self.min_length < 1 || self.min_length > self.max_length {
            return bad("need 1 <= min_length <= max_length");
        }
        if self.max_length > self.num_topics * self.items_per_topic {
            return bad("max_length exceeds the catalog size");
        }
        if self.tail_min_visible < 1 || self.tail_min_visible > self.tail_max_visible {
            return bad("need 1 <= tail_min_visible <= tail_max_visible");
        }
        if !(0.0..=1.0).contains(&self.tail_fraction)
            || self.p_next < 0.0
            || self.p_topic < 0.0
            || self.p_next + self.p_topic > 1.0
        {
            return bad("probabilities out of range");
        }
        if self.num_users == 0 {
            return bad("num_users must be positive");
        }
        Ok(())
    }
}

/// Latent topics of users and items.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub user_topics: BTreeMap<String, usize>,
    pub item_topics: BTreeMap<String, usize>,
    pub tail_users: BTreeSet<String>,
}

impl GroundTruth {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub items: Vec<Item>,
    pub interactions: Vec<Interaction>,
    pub truth: GroundTruth,
}

impl SyntheticData {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join("items.jsonl"), &self.items)?;
        write_jsonl(&dir.join("interactions.jsonl"), &self.interactions)?;
        self.truth.save(&dir.join("truth.json"))
    }
}

fn item_id(topic: usize, j: usize) -> String {
    format!("t{topic}i{j}")
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let (nt, np) = (cfg.num_topics, cfg.items_per_topic);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut items = Vec::with_capacity(nt * np);
    let mut truth = GroundTruth::default();
    for (t, (noun, words)) in TOPICS.iter().enumerate().take(nt) {
        for (j, w) in words.iter().enumerate().take(np) {
            items.push(Item {
                item_id: item_id(t, j),
                title: format!("{w} {noun}"),
            });
            truth.item_topics.insert(item_id(t, j), t);
        }
    }
    let mut interactions = Vec::new();
    for u in 0..cfg.num_users {
        let user = format!("u{u:04}");
        let topic = rng.random_range(0..nt);
        let len = rng.random_range(cfg.min_length..=cfg.max_length);
        let mut seen = BTreeSet::new();
        let mut cur = (topic, rng.random_range(0..np));
        let mut seq = vec![cur];
        seen.insert(cur);
        while seq.len() < len {
            let r: f64 = rng.random();
            let mut next = if r < cfg.p_next {
                (topic, (cur.1 + 1) % np)
            } else if r < cfg.p_next + cfg.p_topic {
                (topic, rng.random_range(0..np))
            } else {
                (rng.random_range(0..nt), rng.random_range(0..np))
            };
            // no repeated interactions; fall back to the next unseen item
            // of the same topic, then anywhere
            if seen.contains(&next) {
                let in_topic = (1..np).map(|d| (next.0, (next.1 + d) % np)).find(|c| !seen.contains(c));
                next = match in_topic {
                    Some(c) => c,
                    None => (0..nt * np)
                        .map(|k| (k / np, k % np))
                        .find(|c| !seen.contains(c))
                        .expect("max_length is at most the catalog size"),
                };
            }
            seen.insert(next);
            seq.push(next);
            cur = next;
        }
        let tail = rng.random_bool(cfg.tail_fraction);
        if tail {
            let keep = rng.random_range(cfg.tail_min_visible..=cfg.tail_max_visible).min(seq.len());
            seq.drain(..seq.len() - keep);
            truth.tail_users.insert(user.clone());
        }
        truth.user_topics.insert(user.clone(), topic);
        for (ts, (t, j)) in seq.into_iter().enumerate() {
            interactions.push(Interaction {
                user_id: user.clone(),
                item_id: item_id(t, j),
                timestamp: 1_000 + ts as i64,
            });
        }
    }
    Ok(SyntheticData {
        items,
        interactions,
        truth,
    })
}

/// Relevance of prompt candidates under the ground truth.
///
/// Filtering prompts score a candidate 1 when it shares the user's latent
/// topic. Reasoning prompts add 1 for the item actually masked, which is
/// the last item of the user's training prefix.
pub fn truth_fn(truth: &GroundTruth, catalog: &Catalog, split: &DatasetSplit) -> TruthFn {
    let title_topic: HashMap<String, usize> = catalog
        .items()
        .iter()
        .filter_map(|it| truth.item_topics.get(&it.item_id).map(|&t| (it.title.clone(), t)))
        .collect();
    let masked: HashMap<String, String> = split
        .entries
        .iter()
        .filter_map(|e| {
            let last = e.train.items.last()?;
            Some((e.user_id.clone(), catalog.title(last)?.to_string()))
        })
        .collect();
    let user_topics = truth.user_topics.clone();
    Arc::new(move |view: &PromptView| {
        let topic = user_topics.get(&view.user_id).copied();
        let masked = masked.get(&view.user_id);
        view.candidates
            .iter()
            .map(|title| {
                let mut s = 0.0;
                if topic.is_some() && title_topic.get(title).copied() == topic {
                    s += 1.0;
                }
                if view.kind == PromptKind::Reason && masked == Some(title) {
                    s += 1.0;
                }
                s
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{leave_one_out_split, IngestOptions};
    use crate::llmio::prompt::render_reason;

    #[test]
    fn deterministic_shape() {
        let cfg = SyntheticConfig {
            seed: 3,
            ..SyntheticConfig::default()
        };
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        assert_eq!(a.items.len(), 60);
        let c = Catalog::from_records(a.items.clone(), a.interactions.clone(), &IngestOptions::default())
            .unwrap();
        assert_eq!(c.sequences().len(), 200);
        for s in c.sequences() {
            let tail = a.truth.tail_users.contains(&s.user_id);
            if tail {
                assert!((1..=3).contains(&s.len()));
            } else {
                assert!((8..=12).contains(&s.len()));
            }
            let distinct: BTreeSet<_> = s.items.iter().collect();
            assert_eq!(distinct.len(), s.len());
        }
        let frac = a.truth.tail_users.len() as f64 / 200.0;
        assert!((0.25..0.55).contains(&frac));
    }

    #[test]
    fn titles_unique_and_letters_only() {
        let d = generate(&SyntheticConfig::default()).unwrap();
        let titles: BTreeSet<_> = d.items.iter().map(|i| i.title.clone()).collect();
        assert_eq!(titles.len(), d.items.len());
        assert!(titles.iter().all(|t| t.chars().all(|c| c.is_ascii_lowercase() || c == ' ')));
    }

    #[test]
    fn truth_scores_topic_and_masked_item() {
        let d = generate(&SyntheticConfig::default()).unwrap();
        let c = Catalog::from_records(d.items.clone(), d.interactions.clone(), &IngestOptions::default())
            .unwrap();
        let split = leave_one_out_split(&c);
        let f = truth_fn(&d.truth, &c, &split);
        let e = &split.entries[0];
        let topic = d.truth.user_topics[&e.user_id];
        let masked = e.train.items.last().unwrap();
        let in_topic = c
            .items()
            .iter()
            .find(|it| d.truth.item_topics[&it.item_id] == topic && &it.item_id != masked)
            .unwrap();
        let off = c
            .items()
            .iter()
            .find(|it| d.truth.item_topics[&it.item_id] != topic)
            .unwrap();
        let cands = [c.title(masked).unwrap(), in_topic.title.as_str(), off.title.as_str()];
        let p = render_reason(&e.user_id, &["x y z"], &cands).unwrap();
        let scores = f(&PromptView::parse(&p).unwrap());
        assert_eq!(scores[1], 1.0);
        assert_eq!(scores[2], 0.0);
        assert!(scores[0] > scores[1]);
    }
}
