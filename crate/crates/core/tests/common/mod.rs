#![allow(dead_code)]

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use llmser::backbone::train::Example;
use llmser::backbone::{BackboneConfig, EncoderKind, TrainedBackbone};
use llmser::catalog::{Catalog, IngestOptions, Interaction, Item};
use llmser::pipeline::{LlmProvider, PipelineConfig};
use llmser::synthetic::{generate, SyntheticConfig};

pub fn item(i: usize) -> String {
    format!("i{i:03}")
}

/// Catalog of `n` items titled by number, plus the given sequences.
pub fn catalog_from(n: usize, sequences: &[(String, Vec<usize>)]) -> Catalog {
    let items = (0..n)
        .map(|i| Item {
            item_id: item(i),
            title: format!("product number {i}"),
        })
        .collect();
    let mut interactions = Vec::new();
    for (user, seq) in sequences {
        for (t, &i) in seq.iter().enumerate() {
            interactions.push(Interaction {
                user_id: user.clone(),
                item_id: item(i),
                timestamp: t as i64,
            });
        }
    }
    Catalog::from_records(items, interactions, &IngestOptions::default()).unwrap()
}

pub fn tiny_config(encoder: EncoderKind, seed: u64) -> BackboneConfig {
    BackboneConfig {
        encoder,
        embedding_dim: 8,
        max_seq_len: 8,
        num_layers: 1,
        num_heads: 2,
        dropout: 0.0,
        learning_rate: 0.01,
        epochs: 1,
        negatives_per_positive: 1,
        batch_size: 8,
        seed,
    }
}

/// Writes a synthetic dataset into `dir` and returns a config pointing at it.
pub fn synthetic_setup(dir: &Path, seed: u64, provider: LlmProvider) -> PipelineConfig {
    let data = generate(&SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let data_dir = dir.join("data");
    data.write(&data_dir).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.seed = seed;
    cfg.output_dir = dir.join("run");
    cfg.llm_provider = provider;
    cfg.data.interactions = data_dir.join("interactions.jsonl");
    cfg.data.items = data_dir.join("items.jsonl");
    cfg.data.truth = Some(data_dir.join("truth.json"));
    cfg.augment.num_pseudo = 6;
    cfg
}

/// Full ranking by repeated arg-max: highest score first, lowest index on
/// ties.
pub fn selection_order(scores: &[f64], exclude: &HashSet<usize>) -> Vec<usize> {
    let mut left: Vec<usize> = (0..scores.len()).filter(|i| !exclude.contains(i)).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for (p, &i) in left.iter().enumerate() {
            let b = left[best];
            if scores[i] > scores[b] {
                best = p;
            }
        }
        out.push(left.remove(best));
    }
    out
}

pub fn vocab_positions(vocab: &llmser::backbone::Vocab, items: &[String]) -> HashSet<usize> {
    items.iter().map(|i| vocab.index_of(i).unwrap() - 1).collect()
}

pub const FD_STEP: f64 = 1e-5;

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn random_example(rng: &mut ChaCha8Rng, num_items: usize, weight: f64) -> Example {
    let len = rng.random_range(2..7);
    let ids: Vec<usize> = (0..len).map(|_| rng.random_range(1..=num_items)).collect();
    let (inputs, positives) = Example::steps(&ids, 8).unwrap();
    let steps = inputs.len();
    Example {
        inputs,
        positives,
        negatives: vec![(0..steps).map(|_| rng.random_range(1..=num_items)).collect()],
        weight,
    }
}

/// Largest relative error between analytic and central-difference
/// gradients over up to `per_param` random coordinates of every parameter.
/// Coordinates whose two estimates differ by less than 1e-8 count as exact.
pub fn max_gradient_error(
    model: &mut TrainedBackbone,
    examples: &[Example],
    rng: &mut ChaCha8Rng,
    per_param: usize,
) -> f64 {
    let (_, grads) = model.loss_and_grad(examples);
    let mut worst: f64 = 0.0;
    for p in 0..grads.len() {
        let size = grads[p].data.len();
        for _ in 0..per_param.min(size) {
            let j = rng.random_range(0..size);
            // the padding row never receives gradient
            if p == 0 && j < grads[0].cols {
                continue;
            }
            let orig = model.params()[p].data[j];
            model.params_mut()[p].data[j] = orig + FD_STEP;
            let hi = model.loss(examples);
            model.params_mut()[p].data[j] = orig - FD_STEP;
            let lo = model.loss(examples);
            model.params_mut()[p].data[j] = orig;
            let fd = (hi - lo) / (2.0 * FD_STEP);
            let g = grads[p].data[j];
            if (g - fd).abs() >= 1e-8 {
                worst = worst.max(rel_err(g, fd));
            }
        }
    }
    worst
}
