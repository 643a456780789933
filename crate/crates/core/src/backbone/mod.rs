//! Trainable sequential recommenders.
//!
//! The same trainer produces the reverse-trained candidate generator, the
//! forward-trained reason candidate selector, the un-augmented baseline and
//! the final dual-channel model. Parameters live in plain matrices and are
//! differentiated with the in-crate [`tape`].

pub mod model;
pub mod tape;
pub mod tensor;
pub mod train;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use model::{BackboneConfig, Direction, EncoderKind, Vocab};
pub use tape::{bce_loss, bce_loss_grad};
pub use tensor::Mat;
use train::{Channel, Example};

use crate::catalog::UserSequence;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedBackbone {
    pub config: BackboneConfig,
    pub direction: Direction,
    vocab: Vocab,
    params: Vec<Mat>,
    param_names: Vec<String>,
    /// Summed training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains a backbone on `sequences` (oldest-first). A reverse model is fit
/// on the reversed sequences. `per_user_weight` scales each user's loss;
/// users missing from the map get weight 1.
pub fn train_backbone(
    vocab: &Vocab,
    sequences: &[UserSequence],
    config: &BackboneConfig,
    direction: Direction,
    per_user_weight: Option<&HashMap<String, f64>>,
) -> Result<TrainedBackbone> {
    let users = sequences
        .iter()
        .map(|s| {
            let weight = per_user_weight
                .and_then(|w| w.get(&s.user_id).copied())
                .unwrap_or(1.0);
            Ok(vec![Channel {
                ids: model_input(vocab, &s.items, direction)?,
                weight,
            }])
        })
        .collect::<Result<Vec<_>>>()?;
    train_channels(vocab, config, direction, &users)
}

/// Trains on explicit per-user channel lists (used by dual-channel training).
pub(crate) fn train_channels(
    vocab: &Vocab,
    config: &BackboneConfig,
    direction: Direction,
    users: &[Vec<Channel>],
) -> Result<TrainedBackbone> {
    config.validate()?;
    if users.is_empty() {
        return Err(Error::Config("no training sequences".into()));
    }
    if vocab.is_empty() {
        return Err(Error::Config("empty vocabulary".into()));
    }
    let out = train::fit(config, vocab.len(), users);
    let layout = model::Layout::new(config, vocab.len());
    Ok(TrainedBackbone {
        config: config.clone(),
        direction,
        vocab: vocab.clone(),
        params: out.params,
        param_names: layout.names,
        epoch_losses: out.epoch_losses,
    })
}

/// Vocab indices in the order the model consumes them.
pub(crate) fn model_input(vocab: &Vocab, items: &[String], direction: Direction) -> Result<Vec<usize>> {
    let mut ids = vocab.encode(items)?;
    if direction == Direction::Reverse {
        ids.reverse();
    }
    Ok(ids)
}

impl TrainedBackbone {
    /// Untrained model with freshly initialized parameters.
    pub fn initialized(vocab: &Vocab, config: &BackboneConfig, direction: Direction) -> Result<Self> {
        config.validate()?;
        let layout = model::Layout::new(config, vocab.len());
        Ok(Self {
            config: config.clone(),
            direction,
            vocab: vocab.clone(),
            params: layout.init(config.seed),
            param_names: layout.names,
            epoch_losses: Vec::new(),
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &[Mat] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Mat] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    /// Item embedding table, padding row first.
    pub fn item_embeddings(&self) -> &Mat {
        &self.params[model::ITEM_EMB]
    }

    /// Same parameters, opposite direction flag.
    pub fn with_direction(&self, direction: Direction) -> Self {
        Self {
            direction,
            ..self.clone()
        }
    }

    /// Final hidden state for a context given as model-input vocab indices.
    fn representation(&self, ids: &[usize]) -> Result<Vec<f64>> {
        if ids.is_empty() {
            return Err(Error::EmptyContext);
        }
        let ids = &ids[ids.len().saturating_sub(self.config.max_seq_len)..];
        let mut tape = tape::Tape::new(&self.params);
        let hidden = model::encode(&mut tape, &self.config, ids, None);
        let h = tape.value(hidden);
        Ok(h.row(h.rows - 1).to_vec())
    }

    /// One score per catalog item (vocab order, padding excluded): the dot
    /// product of the final sequence representation with each item
    /// embedding. A reverse model reads `s` newest-first.
    pub fn score_all(&self, s: &UserSequence) -> Result<Vec<f64>> {
        let ids = model_input(&self.vocab, &s.items, self.direction)?;
        self.score_ids(&ids)
    }

    pub(crate) fn score_ids(&self, ids: &[usize]) -> Result<Vec<f64>> {
        let h = self.representation(ids)?;
        let table = self.item_embeddings();
        let scores: Vec<f64> = (1..table.rows).map(|i| tensor::dot(&h, table.row(i))).collect();
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange("non-finite score".into()));
        }
        Ok(scores)
    }

    /// The `k` best items outside `exclude`, best first.
    pub fn top_k(&self, s: &UserSequence, k: usize, exclude: &HashSet<String>) -> Result<Vec<String>> {
        let scores = self.score_all(s)?;
        top_k_from_scores(&self.vocab, &scores, k, exclude)
    }

    /// Weighted BCE loss and parameter gradients for fixed steps and
    /// negatives, without dropout.
    pub fn loss_and_grad(&self, examples: &[Example]) -> (f64, Vec<Mat>) {
        let mut grads: Vec<Mat> = self.params.iter().map(|p| Mat::zeros(p.rows, p.cols)).collect();
        let mut total = 0.0;
        for ex in examples {
            total += train::example_forward_backward(&self.config, &self.params, ex, None, Some(&mut grads));
        }
        grads[model::ITEM_EMB].row_mut(0).fill(0.0);
        (total, grads)
    }

    pub fn loss(&self, examples: &[Example]) -> f64 {
        examples
            .iter()
            .map(|ex| train::example_forward_backward(&self.config, &self.params, ex, None, None))
            .sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: self.config.clone(),
            direction: self.direction,
            vocab: self.vocab.ids().to_vec(),
            tensors: self
                .param_names
                .iter()
                .zip(&self.params)
                .map(|(name, m)| NamedTensor {
                    name: name.clone(),
                    rows: m.rows,
                    cols: m.cols,
                    data: m.data.clone(),
                })
                .collect(),
            epoch_losses: self.epoch_losses.clone(),
        };
        let bytes = serde_json::to_vec(&ck)?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format `{}`", ck.format)));
        }
        ck.config.validate()?;
        let vocab = Vocab::new(ck.vocab);
        let layout = model::Layout::new(&ck.config, vocab.len());
        if layout.names.len() != ck.tensors.len() {
            return Err(Error::Checkpoint("tensor count does not match config".into()));
        }
        let mut params = Vec::with_capacity(ck.tensors.len());
        for ((name, shape), t) in layout.names.iter().zip(&layout.shapes).zip(ck.tensors) {
            if &t.name != name || (t.rows, t.cols) != *shape || t.data.len() != t.rows * t.cols {
                return Err(Error::Checkpoint(format!("tensor `{}` has unexpected shape", t.name)));
            }
            params.push(Mat::from_vec(t.rows, t.cols, t.data));
        }
        Ok(Self {
            config: ck.config,
            direction: ck.direction,
            vocab,
            params,
            param_names: layout.names,
            epoch_losses: ck.epoch_losses,
        })
    }
}

/// Ranks items by score, highest first, ties broken by ascending vocab index.
pub fn top_k_from_scores(
    vocab: &Vocab,
    scores: &[f64],
    k: usize,
    exclude: &HashSet<String>,
) -> Result<Vec<String>> {
    let mut candidates: Vec<usize> = (0..scores.len())
        .filter(|&i| !exclude.contains(vocab.item(i + 1)))
        .collect();
    if k == 0 || k > candidates.len() {
        return Err(Error::TooManyRequested {
            k,
            available: candidates.len(),
        });
    }
    candidates.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(candidates[..k].iter().map(|&i| vocab.item(i + 1).to_string()).collect())
}

const CHECKPOINT_FORMAT: &str = "llmser-checkpoint/1";

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    config: BackboneConfig,
    direction: Direction,
    vocab: Vec<String>,
    tensors: Vec<NamedTensor>,
    epoch_losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(n: usize) -> Vocab {
        Vocab::new((0..n).map(|i| format!("i{i}")).collect())
    }

    fn seq(items: &[&str]) -> UserSequence {
        UserSequence::new("u", items.iter().map(|s| s.to_string()).collect())
    }

    fn small_cfg(encoder: EncoderKind) -> BackboneConfig {
        BackboneConfig {
            encoder,
            embedding_dim: 8,
            max_seq_len: 6,
            num_heads: 2,
            epochs: 3,
            batch_size: 4,
            ..BackboneConfig::default()
        }
    }

    #[test]
    fn config_rejects_indivisible_heads() {
        let cfg = BackboneConfig {
            embedding_dim: 10,
            num_heads: 3,
            ..BackboneConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let gru = BackboneConfig {
            encoder: EncoderKind::Recurrent,
            ..cfg
        };
        assert!(gru.validate().is_ok());
    }

    #[test]
    fn empty_context_is_an_error() {
        let m = TrainedBackbone::initialized(&vocab(5), &small_cfg(EncoderKind::Recurrent), Direction::Forward)
            .unwrap();
        let err = m.score_all(&seq(&[])).unwrap_err();
        assert_eq!(err.to_string(), "empty context");
    }

    #[test]
    fn scores_are_finite_and_cover_catalog() {
        for enc in [EncoderKind::Recurrent, EncoderKind::CausalSelfAttention] {
            let m = TrainedBackbone::initialized(&vocab(7), &small_cfg(enc), Direction::Forward).unwrap();
            let s = m.score_all(&seq(&["i1", "i4", "i2"])).unwrap();
            assert_eq!(s.len(), 7);
            assert!(s.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn long_contexts_are_truncated_to_recent_items() {
        for enc in [EncoderKind::Recurrent, EncoderKind::CausalSelfAttention] {
            let m = TrainedBackbone::initialized(&vocab(10), &small_cfg(enc), Direction::Forward).unwrap();
            let long = seq(&["i0", "i1", "i2", "i3", "i4", "i5", "i6", "i7", "i8"]);
            let tail = seq(&["i3", "i4", "i5", "i6", "i7", "i8"]);
            assert_eq!(m.score_all(&long).unwrap(), m.score_all(&tail).unwrap());
        }
    }

    #[test]
    fn top_k_edge_cases() {
        let m = TrainedBackbone::initialized(&vocab(6), &small_cfg(EncoderKind::Recurrent), Direction::Forward)
            .unwrap();
        let s = seq(&["i0", "i1"]);
        let all = m.top_k(&s, 6, &HashSet::new()).unwrap();
        let scores = m.score_all(&s).unwrap();
        assert_eq!(all.len(), 6);
        for w in all.windows(2) {
            let a = m.vocab().index_of(&w[0]).unwrap() - 1;
            let b = m.vocab().index_of(&w[1]).unwrap() - 1;
            assert!(scores[a] >= scores[b]);
        }
        let exclude: HashSet<String> = (0..5).map(|i| format!("i{i}")).collect();
        assert_eq!(m.top_k(&s, 1, &exclude).unwrap(), vec!["i5"]);
        assert!(matches!(
            m.top_k(&s, 2, &exclude),
            Err(Error::TooManyRequested { k: 2, available: 1 })
        ));
    }

    #[test]
    fn ties_break_by_vocab_index() {
        let v = vocab(4);
        let ranked = top_k_from_scores(&v, &[1.0, 2.0, 1.0, 2.0], 4, &HashSet::new()).unwrap();
        assert_eq!(ranked, vec!["i1", "i3", "i0", "i2"]);
    }

    #[test]
    fn zero_weights_leave_parameters_untouched() {
        let v = vocab(8);
        let cfg = small_cfg(EncoderKind::CausalSelfAttention);
        let seqs = vec![seq(&["i0", "i1", "i2", "i3"]), seq(&["i4", "i5", "i6"])];
        let weights: HashMap<String, f64> = [("u".to_string(), 0.0)].into();
        let trained = train_backbone(&v, &seqs, &cfg, Direction::Forward, Some(&weights)).unwrap();
        let init = TrainedBackbone::initialized(&v, &cfg, Direction::Forward).unwrap();
        assert_eq!(trained.params(), init.params());
    }

    #[test]
    fn padding_row_stays_zero() {
        let v = vocab(8);
        let cfg = small_cfg(EncoderKind::Recurrent);
        let seqs = vec![seq(&["i0", "i1", "i2", "i3"])];
        let m = train_backbone(&v, &seqs, &cfg, Direction::Forward, None).unwrap();
        assert!(m.item_embeddings().row(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn checkpoint_round_trip_preserves_scores() {
        let dir = tempfile::tempdir().unwrap();
        let v = vocab(8);
        for enc in [EncoderKind::Recurrent, EncoderKind::CausalSelfAttention] {
            let seqs = vec![seq(&["i0", "i1", "i2", "i3"]), seq(&["i4", "i5", "i6", "i7"])];
            let m = train_backbone(&v, &seqs, &small_cfg(enc), Direction::Reverse, None).unwrap();
            let p = dir.path().join("m.json");
            m.save(&p).unwrap();
            let back = TrainedBackbone::load(&p).unwrap();
            assert_eq!(back, m);
            let s = seq(&["i2", "i5"]);
            assert_eq!(back.score_all(&s).unwrap(), m.score_all(&s).unwrap());
        }
    }
}
