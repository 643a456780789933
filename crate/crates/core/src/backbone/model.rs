use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Mat;
use crate::catalog::Catalog;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Single-direction gated recurrent unit over item embeddings.
    Recurrent,
    /// Causal transformer encoder with learned positions.
    CausalSelfAttention,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub encoder: EncoderKind,
    pub embedding_dim: usize,
    pub max_seq_len: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::CausalSelfAttention,
            embedding_dim: 32,
            max_seq_len: 32,
            num_layers: 1,
            num_heads: 1,
            dropout: 0.1,
            learning_rate: 0.005,
            epochs: 40,
            negatives_per_positive: 1,
            batch_size: 32,
            seed: 42,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.embedding_dim == 0 {
            return fail("embedding_dim must be positive");
        }
        if self.max_seq_len == 0 {
            return fail("max_seq_len must be positive");
        }
        if self.num_layers == 0 || self.num_heads == 0 {
            return fail("num_layers and num_heads must be positive");
        }
        if self.encoder == EncoderKind::CausalSelfAttention
            && self.embedding_dim % self.num_heads != 0
        {
            return fail("embedding_dim must be divisible by num_heads");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.negatives_per_positive == 0 {
            return fail("epochs, batch_size and negatives_per_positive must be positive");
        }
        Ok(())
    }
}

/// Item id ↔ embedding row. Row 0 is padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

pub const PAD: usize = 0;

impl Vocab {
    pub fn new(item_ids: Vec<String>) -> Self {
        let index = item_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i + 1))
            .collect();
        Self { ids: item_ids, index }
    }

    pub fn from_catalog(catalog: &Catalog) -> Self {
        Self::new(catalog.items().iter().map(|i| i.item_id.clone()).collect())
    }

    /// Number of real items (padding excluded).
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, item_id: &str) -> Option<usize> {
        self.index.get(item_id).copied()
    }

    pub fn encode(&self, items: &[String]) -> Result<Vec<usize>> {
        items
            .iter()
            .map(|i| self.index_of(i).ok_or_else(|| Error::UnknownItem(i.clone())))
            .collect()
    }

    /// Item id for a vocab index (1-based).
    pub fn item(&self, index: usize) -> &str {
        &self.ids[index - 1]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Parameter slots for one encoder configuration.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub names: Vec<String>,
    pub shapes: Vec<(usize, usize)>,
}

pub(crate) const ITEM_EMB: usize = 0;
const SA_POS: usize = 1;
const SA_PER_LAYER: usize = 16;
const GRU_PER_LAYER: usize = 4;

impl Layout {
    pub fn new(cfg: &BackboneConfig, num_items: usize) -> Self {
        let d = cfg.embedding_dim;
        let mut names = vec!["item_embedding".to_string()];
        let mut shapes = vec![(num_items + 1, d)];
        let mut add = |n: String, s: (usize, usize)| {
            names.push(n);
            shapes.push(s);
        };
        match cfg.encoder {
            EncoderKind::CausalSelfAttention => {
                add("position_embedding".into(), (cfg.max_seq_len, d));
                for l in 0..cfg.num_layers {
                    for (n, s) in [
                        ("attn_norm.gain", (1, d)),
                        ("attn_norm.bias", (1, d)),
                        ("query.weight", (d, d)),
                        ("query.bias", (1, d)),
                        ("key.weight", (d, d)),
                        ("key.bias", (1, d)),
                        ("value.weight", (d, d)),
                        ("value.bias", (1, d)),
                        ("out.weight", (d, d)),
                        ("out.bias", (1, d)),
                        ("ffn_norm.gain", (1, d)),
                        ("ffn_norm.bias", (1, d)),
                        ("ffn1.weight", (d, d)),
                        ("ffn1.bias", (1, d)),
                        ("ffn2.weight", (d, d)),
                        ("ffn2.bias", (1, d)),
                    ] {
                        add(format!("layer{l}.{n}"), s);
                    }
                }
                add("final_norm.gain".into(), (1, d));
                add("final_norm.bias".into(), (1, d));
            }
            EncoderKind::Recurrent => {
                for l in 0..cfg.num_layers {
                    add(format!("gru{l}.input.weight"), (d, 3 * d));
                    add(format!("gru{l}.input.bias"), (1, 3 * d));
                    add(format!("gru{l}.hidden.weight"), (d, 3 * d));
                    add(format!("gru{l}.hidden.bias"), (1, 3 * d));
                }
            }
        }
        Self { names, shapes }
    }

    pub fn init(&self, seed: u64) -> Vec<Mat> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.names
            .iter()
            .zip(&self.shapes)
            .enumerate()
            .map(|(i, (name, &(r, c)))| {
                if name.ends_with(".gain") {
                    Mat::filled(r, c, 1.0)
                } else if name.ends_with(".bias") {
                    Mat::zeros(r, c)
                } else {
                    let bound = (6.0 / (r + c) as f64).sqrt();
                    let mut m = Mat::from_vec(
                        r,
                        c,
                        (0..r * c).map(|_| rng.random_range(-bound..bound)).collect(),
                    );
                    if i == ITEM_EMB {
                        m.row_mut(PAD).fill(0.0);
                    }
                    m
                }
            })
            .collect()
    }
}

/// Per-call dropout source; `None` disables dropout.
pub(crate) struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        if self.rate <= 0.0 {
            return x;
        }
        let n = tape.value(x).data.len();
        let keep = 1.0 / (1.0 - self.rate);
        let mask = (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < self.rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        tape.mask(x, mask)
    }
}

fn maybe_drop(tape: &mut Tape, x: Var, drop: &mut Option<Dropout>) -> Var {
    match drop {
        Some(d) => d.apply(tape, x),
        None => x,
    }
}

/// Encodes a sequence of vocab indices (model input order, at most
/// `max_seq_len` long) into one hidden row per position.
pub(crate) fn encode(
    tape: &mut Tape,
    cfg: &BackboneConfig,
    ids: &[usize],
    mut drop: Option<Dropout>,
) -> Var {
    debug_assert!(!ids.is_empty() && ids.len() <= cfg.max_seq_len);
    match cfg.encoder {
        EncoderKind::CausalSelfAttention => encode_attention(tape, cfg, ids, &mut drop),
        EncoderKind::Recurrent => encode_recurrent(tape, cfg, ids, &mut drop),
    }
}

fn encode_attention(
    tape: &mut Tape,
    cfg: &BackboneConfig,
    ids: &[usize],
    drop: &mut Option<Dropout>,
) -> Var {
    let d = cfg.embedding_dim;
    let t = ids.len();
    // right-aligned positions: the newest item always sits in the last slot
    let positions: Vec<usize> = (cfg.max_seq_len - t..cfg.max_seq_len).collect();
    let emb = tape.gather(ITEM_EMB, ids);
    let pos = tape.gather(SA_POS, &positions);
    let x = tape.add(emb, pos);
    let mut x = maybe_drop(tape, x, drop);

    let heads = cfg.num_heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    for l in 0..cfg.num_layers {
        let base = 2 + l * SA_PER_LAYER;
        let p: Vec<Var> = (0..SA_PER_LAYER).map(|i| tape.param(base + i)).collect();
        let q_in = tape.layer_norm(x, p[0], p[1]);
        let q = tape.matmul(q_in, p[2]);
        let q = tape.add_row(q, p[3]);
        let k = tape.matmul(x, p[4]);
        let k = tape.add_row(k, p[5]);
        let v = tape.matmul(x, p[6]);
        let v = tape.add_row(v, p[7]);
        let mut head_out = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let s = tape.matmul_t(qh, kh);
            let s = tape.scale(s, scale);
            let a = tape.causal_softmax(s);
            let a = maybe_drop(tape, a, drop);
            head_out.push(tape.matmul(a, vh));
        }
        let att = if heads == 1 {
            head_out[0]
        } else {
            tape.concat_cols(&head_out)
        };
        let att = tape.matmul(att, p[8]);
        let att = tape.add_row(att, p[9]);
        let att = maybe_drop(tape, att, drop);
        let x1 = tape.add(q_in, att);
        let f_in = tape.layer_norm(x1, p[10], p[11]);
        let f = tape.matmul(f_in, p[12]);
        let f = tape.add_row(f, p[13]);
        let f = tape.relu(f);
        let f = maybe_drop(tape, f, drop);
        let f = tape.matmul(f, p[14]);
        let f = tape.add_row(f, p[15]);
        let f = maybe_drop(tape, f, drop);
        x = tape.add(f_in, f);
    }
    let last = 2 + cfg.num_layers * SA_PER_LAYER;
    let g = tape.param(last);
    let b = tape.param(last + 1);
    tape.layer_norm(x, g, b)
}

fn encode_recurrent(
    tape: &mut Tape,
    cfg: &BackboneConfig,
    ids: &[usize],
    drop: &mut Option<Dropout>,
) -> Var {
    let d = cfg.embedding_dim;
    let emb = tape.gather(ITEM_EMB, ids);
    let mut x = maybe_drop(tape, emb, drop);
    for l in 0..cfg.num_layers {
        let base = 1 + l * GRU_PER_LAYER;
        let w_in = tape.param(base);
        let b_in = tape.param(base + 1);
        let w_h = tape.param(base + 2);
        let b_h = tape.param(base + 3);
        let xi = tape.matmul(x, w_in);
        let xi = tape.add_row(xi, b_in);
        let mut h = tape.constant(Mat::zeros(1, d));
        let mut outs = Vec::with_capacity(ids.len());
        for step in 0..ids.len() {
            let xt = tape.row(xi, step);
            let hh = tape.matmul(h, w_h);
            let hh = tape.add_row(hh, b_h);
            let xr = tape.slice_cols(xt, 0, d);
            let hr = tape.slice_cols(hh, 0, d);
            let r = tape.add(xr, hr);
            let r = tape.sigmoid(r);
            let xz = tape.slice_cols(xt, d, d);
            let hz = tape.slice_cols(hh, d, d);
            let z = tape.add(xz, hz);
            let z = tape.sigmoid(z);
            let xn = tape.slice_cols(xt, 2 * d, d);
            let hn = tape.slice_cols(hh, 2 * d, d);
            let rn = tape.mul(r, hn);
            let n = tape.add(xn, rn);
            let n = tape.tanh(n);
            let keep = tape.one_minus(z);
            let a = tape.mul(keep, n);
            let b = tape.mul(z, h);
            h = tape.add(a, b);
            outs.push(h);
        }
        x = tape.stack_rows(&outs);
        if l + 1 < cfg.num_layers {
            x = maybe_drop(tape, x, drop);
        }
    }
    x
}
