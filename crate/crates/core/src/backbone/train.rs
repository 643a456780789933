//! Mini-batch BCE training with uniform negative sampling and Adam.
//!
//! Every user contributes one or more weighted *channels* (a sequence plus a
//! loss weight). The plain trainer uses one channel per user; dual-channel
//! training passes the original and augmented sequence side by side.
//! Channels with zero weight are skipped outright, so they neither touch the
//! gradient nor consume randomness.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::model::{encode, BackboneConfig, Dropout, Layout, ITEM_EMB};
use super::tape::Tape;
use super::tensor::Mat;

/// One weighted training sequence, already in model-input order.
#[derive(Clone, Debug)]
pub struct Channel {
    pub ids: Vec<usize>,
    pub weight: f64,
}

/// Prediction steps of one channel with their sampled negatives.
#[derive(Clone, Debug)]
pub struct Example {
    pub inputs: Vec<usize>,
    pub positives: Vec<usize>,
    /// `negatives[j][t]` is the j-th negative for step t.
    pub negatives: Vec<Vec<usize>>,
    pub weight: f64,
}

impl Example {
    /// Builds the next-item steps for the most recent `max_len + 1` items.
    /// Returns `None` when fewer than two items remain.
    pub fn steps(ids: &[usize], max_len: usize) -> Option<(Vec<usize>, Vec<usize>)> {
        if ids.len() < 2 {
            return None;
        }
        let window = &ids[ids.len().saturating_sub(max_len + 1)..];
        Some((
            window[..window.len() - 1].to_vec(),
            window[1..].to_vec(),
        ))
    }
}

/// Draws one negative per step, uniform over items not in `exclude`.
pub fn sample_negatives(
    rng: &mut ChaCha8Rng,
    num_items: usize,
    exclude: &HashSet<usize>,
    steps: usize,
) -> Option<Vec<usize>> {
    let pool: Vec<usize> = (1..=num_items).filter(|i| !exclude.contains(i)).collect();
    if pool.is_empty() {
        return None;
    }
    Some((0..steps).map(|_| pool[rng.random_range(0..pool.len())]).collect())
}

/// Weighted BCE loss of one example and its parameter gradients.
pub(crate) fn example_loss_grad(
    cfg: &BackboneConfig,
    params: &[Mat],
    ex: &Example,
    dropout_seed: Option<u64>,
) -> (f64, Vec<Mat>) {
    let mut grads: Vec<Mat> = params.iter().map(|p| Mat::zeros(p.rows, p.cols)).collect();
    let loss = example_forward_backward(cfg, params, ex, dropout_seed, Some(&mut grads));
    (loss, grads)
}

pub(crate) fn example_forward_backward(
    cfg: &BackboneConfig,
    params: &[Mat],
    ex: &Example,
    dropout_seed: Option<u64>,
    grads: Option<&mut [Mat]>,
) -> f64 {
    let mut tape = Tape::new(params);
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let drop = match rng.as_mut() {
        Some(rng) if cfg.dropout > 0.0 => Some(Dropout {
            rate: cfg.dropout,
            rng,
        }),
        _ => None,
    };
    let hidden = encode(&mut tape, cfg, &ex.inputs, drop);
    let pos_emb = tape.gather(ITEM_EMB, &ex.positives);
    let pos = tape.row_dot(hidden, pos_emb);
    let mut negs = Vec::with_capacity(ex.negatives.len());
    for set in &ex.negatives {
        let e = tape.gather(ITEM_EMB, set);
        negs.push(tape.row_dot(hidden, e));
    }
    let neg = if negs.len() == 1 {
        negs[0]
    } else {
        tape.concat_cols(&negs)
    };
    let loss = tape.bce(pos, neg, ex.weight);
    if let Some(g) = grads {
        tape.backward(loss, g);
    }
    tape.value(loss).data[0]
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    fn new(lr: f64, params: &[Mat]) -> Self {
        let zeros = || params.iter().map(|p| Mat::zeros(p.rows, p.cols)).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    fn update(&mut self, params: &mut [Mat], grads: &[Mat]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

pub(crate) struct FitOutput {
    pub params: Vec<Mat>,
    pub epoch_losses: Vec<f64>,
}

/// Trains fresh parameters on per-user channel lists.
pub(crate) fn fit(cfg: &BackboneConfig, num_items: usize, users: &[Vec<Channel>]) -> FitOutput {
    let layout = Layout::new(cfg, num_items);
    let mut params = layout.init(cfg.seed);
    let mut adam = Adam::new(cfg.learning_rate, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..users.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut jobs: Vec<(Example, u64)> = Vec::new();
            for &u in batch {
                for ch in &users[u] {
                    if ch.weight == 0.0 {
                        continue;
                    }
                    let Some((inputs, positives)) = Example::steps(&ch.ids, cfg.max_seq_len)
                    else {
                        continue;
                    };
                    let exclude: HashSet<usize> = ch.ids.iter().copied().collect();
                    let mut negatives = Vec::with_capacity(cfg.negatives_per_positive);
                    for _ in 0..cfg.negatives_per_positive {
                        if let Some(n) =
                            sample_negatives(&mut rng, num_items, &exclude, positives.len())
                        {
                            negatives.push(n);
                        }
                    }
                    if negatives.is_empty() {
                        continue;
                    }
                    let dropout_seed = rng.next_u64();
                    jobs.push((
                        Example {
                            inputs,
                            positives,
                            negatives,
                            weight: ch.weight,
                        },
                        dropout_seed,
                    ));
                }
            }
            let results: Vec<(f64, Vec<Mat>)> = jobs
                .par_iter()
                .map(|(ex, seed)| example_loss_grad(cfg, &params, ex, Some(*seed)))
                .collect();
            let mut grads: Vec<Mat> = params.iter().map(|p| Mat::zeros(p.rows, p.cols)).collect();
            for (loss, g) in &results {
                epoch_loss += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.add_assign(gi);
                }
            }
            grads[ITEM_EMB].row_mut(0).fill(0.0);
            adam.update(&mut params, &grads);
        }
        log::debug!("epoch {epoch}: loss {epoch_loss:.4}");
        epoch_losses.push(epoch_loss);
    }
    FitOutput {
        params,
        epoch_losses,
    }
}
