//! Dual-channel training: every user contributes its original sequence and
//! its augmented sequence, weighted by `1 - α` and `α`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::arv::ValidationRecord;
use crate::backbone::train::Channel;
use crate::backbone::{train_channels, BackboneConfig, Direction, TrainedBackbone, Vocab};
use crate::error::{Error, Result};
use crate::sia::AugmentedSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DctConfig {
    pub beta: f64,
    pub tail_threshold: usize,
    pub backbone: BackboneConfig,
}

impl Default for DctConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            tail_threshold: 3,
            backbone: BackboneConfig::default(),
        }
    }
}

impl DctConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Config(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if self.tail_threshold == 0 {
            return Err(Error::Config("tail_threshold must be at least 1".into()));
        }
        self.backbone.validate()
    }
}

/// `β·ω` for users with more than `T` interactions, `ω` otherwise.
pub fn decay_weight(omega: f64, n_u: usize, cfg: &DctConfig) -> Result<f64> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::OutOfRange(format!("reliability {omega} outside [0, 1]")));
    }
    Ok(if n_u > cfg.tail_threshold {
        cfg.beta * omega
    } else {
        omega
    })
}

/// `(1 - α)·L(S) + α·L(S̃)`; a zero-weighted channel is ignored entirely.
pub fn weighted_loss(loss_orig: f64, loss_aug: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        loss_orig
    } else if alpha == 1.0 {
        loss_aug
    } else {
        (1.0 - alpha) * loss_orig + alpha * loss_aug
    }
}

/// Per-user `α` from validation records. `lengths` holds each user's full
/// interaction count. With `fixed_one`, every user gets `α = 1`.
pub fn compute_alphas(
    records: &[ValidationRecord],
    lengths: &HashMap<&str, usize>,
    cfg: &DctConfig,
    fixed_one: bool,
) -> Result<BTreeMap<String, f64>> {
    records
        .iter()
        .map(|r| {
            let alpha = if fixed_one {
                1.0
            } else {
                let n = *lengths
                    .get(r.user_id.as_str())
                    .ok_or_else(|| Error::UnknownItem(format!("user {}", r.user_id)))?;
                decay_weight(r.omega, n, cfg)?
            };
            Ok((r.user_id.clone(), alpha))
        })
        .collect()
}

/// The two weighted channels of one user, original first.
pub fn user_channels(vocab: &Vocab, a: &AugmentedSequence) -> Result<Vec<Channel>> {
    let alpha = a
        .weight
        .ok_or_else(|| Error::Config(format!("user {} has no training weight", a.user_id)))?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfRange(format!("weight {alpha} outside [0, 1]")));
    }
    Ok(vec![
        Channel {
            ids: vocab.encode(&a.original.items)?,
            weight: 1.0 - alpha,
        },
        Channel {
            ids: vocab.encode(&a.combined().items)?,
            weight: alpha,
        },
    ])
}

/// Trains a forward model on both channels of every user.
pub fn train_dual_channel(
    vocab: &Vocab,
    augmented: &[AugmentedSequence],
    cfg: &DctConfig,
) -> Result<TrainedBackbone> {
    cfg.validate()?;
    if let Some(a) = augmented.iter().find(|a| a.reliability.is_none()) {
        return Err(Error::Config(format!("user {} has no reliability score", a.user_id)));
    }
    let users = augmented
        .iter()
        .map(|a| user_channels(vocab, a))
        .collect::<Result<Vec<_>>>()?;
    train_channels(vocab, &cfg.backbone, Direction::Forward, &users)
}

/// Sets `ω` and `α` on each augmented sequence from validation records.
pub fn attach_weights(
    augmented: &mut [AugmentedSequence],
    records: &[ValidationRecord],
    alphas: &BTreeMap<String, f64>,
) -> Result<()> {
    let omegas: HashMap<&str, f64> = records.iter().map(|r| (r.user_id.as_str(), r.omega)).collect();
    for a in augmented {
        let omega = omegas
            .get(a.user_id.as_str())
            .ok_or_else(|| Error::Config(format!("user {} has no validation record", a.user_id)))?;
        a.reliability = Some(*omega);
        a.weight = alphas.get(&a.user_id).copied();
    }
    Ok(())
}

/// Written next to the trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub mode: String,
    pub beta: f64,
    #[serde(rename = "T")]
    pub tail_threshold: usize,
    pub per_user_alpha: Option<String>,
    pub seed: u64,
    pub final_checkpoints: Vec<String>,
}
