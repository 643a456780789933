//! Items, interaction logs and per-user sequences.
//!
//! Ingestion reads two newline-delimited JSON files (interactions and item
//! titles), resolves every interaction against the item table, and builds one
//! chronologically ordered [`UserSequence`] per user. The resulting
//! [`Catalog`] is immutable.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    pub title: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

/// A user's interactions, oldest first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSequence {
    pub user_id: String,
    pub items: Vec<String>,
}

impl UserSequence {
    pub fn new(user_id: impl Into<String>, items: Vec<String>) -> Self {
        Self {
            user_id: user_id.into(),
            items,
        }
    }

    /// Interaction count `n_u`.
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Returns the sequence with its items in reverse chronological order.
pub fn reverse_sequence(s: &UserSequence) -> UserSequence {
    UserSequence {
        user_id: s.user_id.clone(),
        items: s.items.iter().rev().cloned().collect(),
    }
}

#[derive(Clone, Debug, Default)]
pub struct IngestOptions {
    /// Users with fewer interactions are dropped. 1 keeps everyone.
    pub min_interactions: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Catalog {
    items: Vec<Item>,
    index: HashMap<String, usize>,
    sequences: Vec<UserSequence>,
    timestamps: Vec<Vec<i64>>,
    dropped: usize,
}

#[derive(Serialize, Deserialize)]
struct SerializedCatalog {
    item_count: usize,
    interaction_count: usize,
    items: Vec<Item>,
    interactions: Vec<Interaction>,
}

impl Catalog {
    /// Builds a catalog from in-memory records.
    ///
    /// Duplicate item ids keep their first title. Interactions naming unknown
    /// items are dropped and counted; more than half unresolved is fatal.
    pub fn from_records(
        items: Vec<Item>,
        interactions: Vec<Interaction>,
        opts: &IngestOptions,
    ) -> Result<Self> {
        if interactions.is_empty() {
            return Err(Error::NoInteractions);
        }
        let mut kept_items = Vec::with_capacity(items.len());
        let mut index = HashMap::with_capacity(items.len());
        for item in items {
            if item.item_id.is_empty() {
                return Err(Error::InvalidItem("empty item_id".into()));
            }
            if item.title.trim().is_empty() {
                return Err(Error::InvalidItem(format!(
                    "item `{}` has an empty title",
                    item.item_id
                )));
            }
            if index.contains_key(&item.item_id) {
                continue;
            }
            index.insert(item.item_id.clone(), kept_items.len());
            kept_items.push(item);
        }

        let total = interactions.len();
        let mut dropped = 0;
        let mut user_order: Vec<String> = Vec::new();
        let mut per_user: HashMap<String, Vec<(i64, String)>> = HashMap::new();
        for it in interactions {
            if !index.contains_key(&it.item_id) {
                dropped += 1;
                continue;
            }
            let entry = per_user.entry(it.user_id.clone()).or_insert_with(|| {
                user_order.push(it.user_id.clone());
                Vec::new()
            });
            entry.push((it.timestamp, it.item_id));
        }
        if dropped * 2 > total {
            return Err(Error::UnresolvedInteractions { dropped, total });
        }
        if dropped > 0 {
            log::warn!("dropped {dropped} of {total} interactions with unknown items");
        }

        let min_len = opts.min_interactions.max(1);
        let mut sequences = Vec::with_capacity(user_order.len());
        let mut timestamps = Vec::with_capacity(user_order.len());
        for user in user_order {
            let mut events = per_user.remove(&user).unwrap_or_default();
            if events.len() < min_len {
                continue;
            }
            // stable: ties keep input order
            events.sort_by_key(|(ts, _)| *ts);
            let (ts, items): (Vec<i64>, Vec<String>) = events.into_iter().unzip();
            sequences.push(UserSequence::new(user, items));
            timestamps.push(ts);
        }

        Ok(Self {
            items: kept_items,
            index,
            sequences,
            timestamps,
            dropped,
        })
    }

    /// Reads the interactions and items files.
    pub fn ingest(
        interactions_file: &Path,
        items_file: &Path,
        opts: &IngestOptions,
    ) -> Result<Self> {
        let items: Vec<Item> = read_jsonl(items_file)?;
        let interactions: Vec<Interaction> = read_jsonl(interactions_file)?;
        Self::from_records(items, interactions, opts)
    }

    /// Writes the catalog as a single JSON document with count header.
    pub fn save(&self, path: &Path) -> Result<()> {
        let interactions = self
            .sequences
            .iter()
            .zip(&self.timestamps)
            .flat_map(|(s, ts)| {
                s.items.iter().zip(ts).map(|(item, t)| Interaction {
                    user_id: s.user_id.clone(),
                    item_id: item.clone(),
                    timestamp: *t,
                })
            })
            .collect::<Vec<_>>();
        let doc = SerializedCatalog {
            item_count: self.items.len(),
            interaction_count: interactions.len(),
            items: self.items.clone(),
            interactions,
        };
        let bytes = serde_json::to_vec(&doc)?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let doc: SerializedCatalog = serde_json::from_slice(&bytes)?;
        if doc.item_count != doc.items.len() || doc.interaction_count != doc.interactions.len() {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line: 1,
                message: "count header does not match record streams".into(),
            });
        }
        Self::from_records(doc.items, doc.interactions, &IngestOptions::default())
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    /// Zero-based position of an item in catalog order.
    pub fn position(&self, item_id: &str) -> Option<usize> {
        self.index.get(item_id).copied()
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.index.contains_key(item_id)
    }

    pub fn title(&self, item_id: &str) -> Option<&str> {
        self.position(item_id).map(|i| self.items[i].title.as_str())
    }

    pub fn sequences(&self) -> &[UserSequence] {
        &self.sequences
    }

    pub fn sequence(&self, user_id: &str) -> Option<&UserSequence> {
        self.sequences.iter().find(|s| s.user_id == user_id)
    }

    /// Number of interactions dropped because their item was unknown.
    pub fn dropped_interactions(&self) -> usize {
        self.dropped
    }

    pub fn num_interactions(&self) -> usize {
        self.sequences.iter().map(UserSequence::len).sum()
    }

    /// Interaction count per user.
    pub fn lengths(&self) -> HashMap<&str, usize> {
        self.sequences
            .iter()
            .map(|s| (s.user_id.as_str(), s.len()))
            .collect()
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Writes records as newline-delimited JSON.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    read_jsonl(path)
}

/// Leave-one-out split for one user.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub user_id: String,
    pub train: UserSequence,
    pub valid: Option<String>,
    pub test: Option<String>,
    /// Full interaction count `n_u`.
    pub length: usize,
}

impl SplitEntry {
    /// Context used to rank the test target: training prefix plus the
    /// validation item when present.
    pub fn test_context(&self) -> UserSequence {
        let mut items = self.train.items.clone();
        items.extend(self.valid.iter().cloned());
        UserSequence::new(self.user_id.clone(), items)
    }

    pub fn is_evaluable(&self) -> bool {
        self.test.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub entries: Vec<SplitEntry>,
}

impl DatasetSplit {
    /// Training prefixes for every user, in catalog order.
    pub fn train_sequences(&self) -> Vec<UserSequence> {
        self.entries.iter().map(|e| e.train.clone()).collect()
    }

    pub fn entry(&self, user_id: &str) -> Option<&SplitEntry> {
        self.entries.iter().find(|e| e.user_id == user_id)
    }
}

/// Last item is the test target, the one before it the validation target.
///
/// Users with two interactions get a test target only; single-interaction
/// users keep their item for training and are not evaluated.
pub fn leave_one_out_split(catalog: &Catalog) -> DatasetSplit {
    let entries = catalog
        .sequences()
        .iter()
        .map(|s| {
            let n = s.len();
            let (train, valid, test) = match n {
                0 | 1 => (s.items.clone(), None, None),
                2 => (s.items[..1].to_vec(), None, Some(s.items[1].clone())),
                _ => (
                    s.items[..n - 2].to_vec(),
                    Some(s.items[n - 2].clone()),
                    Some(s.items[n - 1].clone()),
                ),
            };
            SplitEntry {
                user_id: s.user_id.clone(),
                train: UserSequence::new(s.user_id.clone(), train),
                valid,
                test,
                length: n,
            }
        })
        .collect();
    DatasetSplit { entries }
}

/// User groups by interaction count. `bounds` are the lower edges of every
/// group after the first: `[4, 6]` gives `(0,4)`, `[4,6)`, `[6,∞)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupingConfig {
    pub tail_threshold: usize,
    pub bounds: Vec<usize>,
    pub labels: Vec<String>,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self {
            tail_threshold: 3,
            bounds: vec![4, 6],
            labels: vec!["short".into(), "medium".into(), "long".into()],
        }
    }
}

impl GroupingConfig {
    /// Two groups split at the tail threshold: `tail` (n_u <= T) and `head`.
    pub fn tail_head(tail_threshold: usize) -> Self {
        Self {
            tail_threshold,
            bounds: vec![tail_threshold + 1],
            labels: vec!["tail".into(), "head".into()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tail_threshold == 0 {
            return Err(Error::Config("tail_threshold must be positive".into()));
        }
        if self.bounds.first() == Some(&0) {
            return Err(Error::Config("group bounds must be positive".into()));
        }
        if self.bounds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("group bounds must be strictly increasing".into()));
        }
        if self.labels.len() != self.bounds.len() + 1 {
            return Err(Error::Config(format!(
                "{} group bounds need {} labels, got {}",
                self.bounds.len(),
                self.bounds.len() + 1,
                self.labels.len()
            )));
        }
        Ok(())
    }

    pub fn label_for(&self, n_u: usize) -> &str {
        let group = self.bounds.iter().take_while(|&&b| n_u >= b).count();
        &self.labels[group]
    }
}

pub fn group_users(
    catalog: &Catalog,
    grouping: &GroupingConfig,
) -> Result<BTreeMap<String, BTreeSet<String>>> {
    grouping.validate()?;
    let mut groups: BTreeMap<String, BTreeSet<String>> = grouping
        .labels
        .iter()
        .map(|l| (l.clone(), BTreeSet::new()))
        .collect();
    for s in catalog.sequences() {
        groups
            .get_mut(grouping.label_for(s.len()))
            .expect("label present")
            .insert(s.user_id.clone());
    }
    Ok(groups)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBucket {
    pub label: String,
    pub users: usize,
    pub fraction: f64,
}

/// Users per length bucket. `edges` are inclusive upper edges; a final
/// open bucket collects everything longer. Empty buckets are omitted.
pub fn length_histogram(catalog: &Catalog, edges: &[usize]) -> Vec<HistogramBucket> {
    let total = catalog.sequences().len();
    if total == 0 {
        return Vec::new();
    }
    let mut counts = vec![0usize; edges.len() + 1];
    for s in catalog.sequences() {
        let b = edges.iter().take_while(|&&e| s.len() > e).count();
        counts[b] += 1;
    }
    let mut out = Vec::new();
    for (b, &users) in counts.iter().enumerate() {
        if users == 0 {
            continue;
        }
        let label = match (b.checked_sub(1).map(|p| edges[p]), edges.get(b)) {
            (None, Some(hi)) => format!("<={hi}"),
            (Some(lo), Some(hi)) => format!("{}-{hi}", lo + 1),
            (Some(lo), None) => format!(">{lo}"),
            (None, None) => "all".to_string(),
        };
        out.push(HistogramBucket {
            label,
            users,
            fraction: users as f64 / total as f64,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str) -> Item {
        Item {
            item_id: id.into(),
            title: format!("title {id}"),
        }
    }

    fn ev(u: &str, i: &str, t: i64) -> Interaction {
        Interaction {
            user_id: u.into(),
            item_id: i.into(),
            timestamp: t,
        }
    }

    fn catalog_with_lengths(lengths: &[usize]) -> Catalog {
        let items: Vec<Item> = (0..20).map(|i| item(&format!("i{i}"))).collect();
        let mut inter = Vec::new();
        for (u, &n) in lengths.iter().enumerate() {
            for t in 0..n {
                inter.push(ev(&format!("u{u}"), &format!("i{t}"), t as i64));
            }
        }
        Catalog::from_records(items, inter, &IngestOptions::default()).unwrap()
    }

    #[test]
    fn builds_one_sequence_per_user() {
        let c = Catalog::from_records(
            vec![item("a"), item("b"), item("c")],
            vec![ev("u1", "b", 2), ev("u1", "a", 1), ev("u1", "c", 3)],
            &IngestOptions::default(),
        )
        .unwrap();
        assert_eq!(c.sequences().len(), 1);
        assert_eq!(c.sequences()[0].items, vec!["a", "b", "c"]);
    }

    #[test]
    fn unknown_items_are_dropped_and_counted() {
        let c = Catalog::from_records(
            vec![item("a"), item("b")],
            vec![ev("u1", "a", 1), ev("u1", "zzz", 2), ev("u1", "b", 3)],
            &IngestOptions::default(),
        )
        .unwrap();
        assert_eq!(c.dropped_interactions(), 1);
        assert_eq!(c.sequences()[0].items, vec!["a", "b"]);
    }

    #[test]
    fn mostly_unresolved_is_fatal() {
        let err = Catalog::from_records(
            vec![item("a")],
            vec![ev("u1", "a", 1), ev("u1", "x", 2), ev("u1", "y", 3)],
            &IngestOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnresolvedInteractions { dropped: 2, total: 3 }));
    }

    #[test]
    fn empty_interactions_error() {
        let err = Catalog::from_records(vec![item("a")], vec![], &IngestOptions::default())
            .unwrap_err();
        assert_eq!(err.to_string(), "no interactions");
    }

    #[test]
    fn timestamp_ties_keep_input_order() {
        let c = Catalog::from_records(
            vec![item("a"), item("b"), item("c")],
            vec![ev("u", "c", 5), ev("u", "a", 5), ev("u", "b", 1)],
            &IngestOptions::default(),
        )
        .unwrap();
        assert_eq!(c.sequences()[0].items, vec!["b", "c", "a"]);
    }

    #[test]
    fn duplicate_items_keep_first_title() {
        let c = Catalog::from_records(
            vec![
                Item { item_id: "a".into(), title: "first".into() },
                Item { item_id: "a".into(), title: "second".into() },
            ],
            vec![ev("u", "a", 1)],
            &IngestOptions::default(),
        )
        .unwrap();
        assert_eq!(c.num_items(), 1);
        assert_eq!(c.title("a"), Some("first"));
    }

    #[test]
    fn blank_title_rejected() {
        let err = Catalog::from_records(
            vec![Item { item_id: "a".into(), title: "  ".into() }],
            vec![ev("u", "a", 1)],
            &IngestOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidItem(_)));
    }

    #[test]
    fn min_interactions_filters_users() {
        let items: Vec<Item> = (0..5).map(|i| item(&format!("i{i}"))).collect();
        let inter = vec![ev("u1", "i0", 1), ev("u2", "i0", 1), ev("u2", "i1", 2)];
        let c = Catalog::from_records(items, inter, &IngestOptions { min_interactions: 2 })
            .unwrap();
        assert_eq!(c.sequences().len(), 1);
        assert_eq!(c.sequences()[0].user_id, "u2");
    }

    #[test]
    fn reverse_examples() {
        let s = UserSequence::new("u", vec!["a".into(), "b".into(), "c".into()]);
        assert_eq!(reverse_sequence(&s).items, vec!["c", "b", "a"]);
        let one = UserSequence::new("u", vec!["a".into()]);
        assert_eq!(reverse_sequence(&one), one);
        let two = UserSequence::new("u", vec!["a".into(), "b".into()]);
        assert_eq!(reverse_sequence(&reverse_sequence(&two)), two);
    }

    #[test]
    fn split_examples() {
        let items: Vec<Item> = ["a", "b", "c", "d"].iter().map(|i| item(i)).collect();
        let inter = vec![
            ev("u4", "a", 1),
            ev("u4", "b", 2),
            ev("u4", "c", 3),
            ev("u4", "d", 4),
            ev("u2", "a", 1),
            ev("u2", "b", 2),
            ev("u1", "a", 1),
        ];
        let c = Catalog::from_records(items, inter, &IngestOptions::default()).unwrap();
        let split = leave_one_out_split(&c);
        let u4 = split.entry("u4").unwrap();
        assert_eq!(u4.train.items, vec!["a", "b"]);
        assert_eq!(u4.valid.as_deref(), Some("c"));
        assert_eq!(u4.test.as_deref(), Some("d"));
        let u2 = split.entry("u2").unwrap();
        assert_eq!(u2.train.items, vec!["a"]);
        assert_eq!(u2.valid, None);
        assert_eq!(u2.test.as_deref(), Some("b"));
        let u1 = split.entry("u1").unwrap();
        assert_eq!(u1.train.items, vec!["a"]);
        assert!(!u1.is_evaluable());
    }

    #[test]
    fn grouping_follows_half_open_bounds() {
        let g = GroupingConfig::default();
        assert_eq!(g.label_for(3), "short");
        assert_eq!(g.label_for(4), "medium");
        assert_eq!(g.label_for(5), "medium");
        assert_eq!(g.label_for(6), "long");
        assert_eq!(g.label_for(100), "long");
    }

    #[test]
    fn grouping_rejects_bad_bounds() {
        let mut g = GroupingConfig::default();
        g.bounds = vec![6, 4];
        assert!(g.validate().is_err());
        g.bounds = vec![4, 6, 8];
        assert!(g.validate().is_err());
    }

    #[test]
    fn group_users_partitions() {
        let c = catalog_with_lengths(&[1, 3, 4, 5, 6, 12]);
        let groups = group_users(&c, &GroupingConfig::default()).unwrap();
        assert_eq!(groups["short"].len(), 2);
        assert_eq!(groups["medium"].len(), 2);
        assert_eq!(groups["long"].len(), 2);
    }

    #[test]
    fn histogram_examples() {
        let c = catalog_with_lengths(&[1, 1, 2, 9]);
        let h = length_histogram(&c, &[8]);
        assert_eq!(h[0].label, "<=8");
        assert_eq!(h[0].users, 3);
        assert!((h[0].fraction - 0.75).abs() < 1e-12);
        let sum: f64 = h.iter().map(|b| b.fraction).sum();
        assert!((sum - 1.0).abs() < 1e-9);

        let single = catalog_with_lengths(&[5]);
        let h = length_histogram(&single, &[2, 4, 8]);
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].fraction, 1.0);
        assert_eq!(h[0].label, "5-8");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = catalog_with_lengths(&[1, 3, 7]);
        let p = dir.path().join("catalog.json");
        c.save(&p).unwrap();
        let back = Catalog::load(&p).unwrap();
        assert_eq!(back, c);
    }
}
