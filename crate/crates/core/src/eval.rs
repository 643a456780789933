//! Full-catalog ranking metrics, grouped reports and significance tests.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::backbone::{Direction, TrainedBackbone, Vocab};
use crate::catalog::{DatasetSplit, GroupingConfig, UserSequence};
use crate::error::{Error, Result};
use crate::sia::require_direction;

/// 1-based rank of `target` among non-excluded items, ties broken by
/// ascending vocab index.
pub fn rank_from_scores(
    vocab: &Vocab,
    scores: &[f64],
    target: &str,
    exclude: &HashSet<String>,
) -> Result<usize> {
    let t = vocab
        .index_of(target)
        .ok_or_else(|| Error::UnknownItem(target.to_string()))?
        - 1;
    if exclude.contains(target) {
        return Err(Error::OutOfRange(format!("target {target} is excluded")));
    }
    let st = scores[t];
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| {
            j != t && (s > st || (s == st && j < t)) && !exclude.contains(vocab.item(j + 1))
        })
        .count();
    Ok(ahead + 1)
}

pub fn rank_of_target(
    model: &TrainedBackbone,
    context: &UserSequence,
    target: &str,
    exclude: &HashSet<String>,
) -> Result<usize> {
    let scores = model.score_all(context)?;
    rank_from_scores(model.vocab(), &scores, target, exclude)
}

pub fn hit_rate_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

fn ndcg_term(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

pub fn ndcg_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|&r| ndcg_term(r, k)).sum::<f64>() / ranks.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Two-sided paired t-test of `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::OutOfRange(format!(
            "paired t-test needs two equal-length samples of size >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = a.len() - 1;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest { t: 0.0, df, p_value: 1.0 }
        } else {
            TTest {
                t: mean.signum() * f64::INFINITY,
                df,
                p_value: 0.0,
            }
        });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| Error::OutOfRange(format!("t distribution: {e}")))?;
    let p_value = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTest { t, df, p_value })
}

/// Which context feeds the final model at test time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceContext {
    /// Real interactions only.
    Original,
    /// Pseudo-prior items followed by the real interactions.
    Augmented,
    /// `(1 - α)` times the original-context scores plus `α` times the
    /// augmented-context scores.
    #[default]
    Blend,
}

/// Pseudo-prior items and training weight of one user.
#[derive(Clone, Debug, PartialEq)]
pub struct UserAugmentation {
    pub pseudo_items: Vec<String>,
    pub alpha: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub user_count: usize,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub label: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ks: Vec<usize>,
    pub user_count: usize,
    pub overall: BTreeMap<String, f64>,
    pub groups: BTreeMap<String, GroupMetrics>,
    /// Test-item rank of every evaluated user.
    pub ranks: BTreeMap<String, usize>,
    /// Full interaction count of every evaluated user.
    pub lengths: BTreeMap<String, usize>,
    pub provenance: Provenance,
}

fn metric_map(ranks: &[usize], ks: &[usize]) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for &k in ks {
        m.insert(format!("HR@{k}"), hit_rate_at_k(ranks, k));
        m.insert(format!("NDCG@{k}"), ndcg_at_k(ranks, k));
    }
    m
}

impl MetricsReport {
    /// Aggregates per-user ranks into overall and grouped metrics.
    pub fn from_ranks(
        ranks: BTreeMap<String, usize>,
        lengths: BTreeMap<String, usize>,
        grouping: &GroupingConfig,
        ks: &[usize],
        provenance: Provenance,
    ) -> Self {
        let all: Vec<usize> = ranks.values().copied().collect();
        let mut by_group: BTreeMap<String, Vec<usize>> = grouping
            .labels
            .iter()
            .map(|l| (l.clone(), Vec::new()))
            .collect();
        for (u, &r) in &ranks {
            let label = grouping.label_for(lengths[u]).to_string();
            by_group.entry(label).or_default().push(r);
        }
        let groups = by_group
            .into_iter()
            .map(|(label, rs)| {
                (
                    label,
                    GroupMetrics {
                        user_count: rs.len(),
                        metrics: metric_map(&rs, ks),
                    },
                )
            })
            .collect();
        Self {
            ks: ks.to_vec(),
            user_count: all.len(),
            overall: metric_map(&all, ks),
            groups,
            ranks,
            lengths,
            provenance,
        }
    }

    /// A metric (`"HR"` or `"NDCG"`) over the users whose length satisfies
    /// `keep`.
    pub fn cohort_metric(&self, metric: &str, k: usize, keep: impl Fn(usize) -> bool) -> f64 {
        let rs: Vec<usize> = self
            .ranks
            .iter()
            .filter(|(u, _)| keep(self.lengths[*u]))
            .map(|(_, &r)| r)
            .collect();
        match metric {
            "HR" => hit_rate_at_k(&rs, k),
            _ => ndcg_at_k(&rs, k),
        }
    }

    /// Per-user values of one metric, in user-id order.
    pub fn per_user(&self, metric: &str, k: usize) -> Vec<f64> {
        self.ranks
            .values()
            .map(|&r| match metric {
                "HR" => f64::from(u8::from(r <= k)),
                _ => ndcg_term(r, k),
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Rows `group,users,metric,value`, overall first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,users,metric,value\n");
        for (m, v) in &self.overall {
            let _ = writeln!(out, "overall,{},{m},{v}", self.user_count);
        }
        for (g, gm) in &self.groups {
            for (m, v) in &gm.metrics {
                let _ = writeln!(out, "{g},{},{m},{v}", gm.user_count);
            }
        }
        out
    }
}

/// Ranks every evaluable user's test item with the user's training items
/// excluded and aggregates the result.
pub fn evaluate(
    model: &TrainedBackbone,
    split: &DatasetSplit,
    grouping: &GroupingConfig,
    ks: &[usize],
    augmentation: Option<(&HashMap<String, UserAugmentation>, InferenceContext)>,
    provenance: Provenance,
) -> Result<MetricsReport> {
    require_direction(model, Direction::Forward)?;
    grouping.validate()?;
    let results: Vec<(String, usize, usize)> = split
        .entries
        .par_iter()
        .filter(|e| e.is_evaluable())
        .map(|e| {
            let target = e.test.as_deref().expect("evaluable entries have a test item");
            let exclude: HashSet<String> = e.train.items.iter().cloned().collect();
            let ctx = e.test_context();
            let aug = augmentation.and_then(|(m, mode)| m.get(&e.user_id).map(|a| (a, mode)));
            let scores = match aug {
                None | Some((_, InferenceContext::Original)) => model.score_all(&ctx)?,
                Some((a, mode)) => {
                    let mut items = a.pseudo_items.clone();
                    items.extend(ctx.items.iter().cloned());
                    let aug_scores = model.score_all(&UserSequence::new(e.user_id.clone(), items))?;
                    if mode == InferenceContext::Augmented || a.alpha == 1.0 {
                        aug_scores
                    } else if a.alpha == 0.0 {
                        model.score_all(&ctx)?
                    } else {
                        let orig = model.score_all(&ctx)?;
                        orig.iter()
                            .zip(&aug_scores)
                            .map(|(o, s)| (1.0 - a.alpha) * o + a.alpha * s)
                            .collect()
                    }
                }
            };
            let rank = rank_from_scores(model.vocab(), &scores, target, &exclude)?;
            Ok((e.user_id.clone(), rank, e.length))
        })
        .collect::<Result<_>>()?;
    let mut ranks = BTreeMap::new();
    let mut lengths = BTreeMap::new();
    for (u, r, n) in results {
        ranks.insert(u.clone(), r);
        lengths.insert(u, n);
    }
    Ok(MetricsReport::from_ranks(ranks, lengths, grouping, ks, provenance))
}
