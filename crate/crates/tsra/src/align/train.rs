//! SGD training loop for the alignment head.
//!
//! Plain SGD with momentum and weight decay: per batch,
//! `v <- momentum * v + (grad + weight_decay * param)` then
//! `param <- param - learning_rate * v`. Batches are formed from a seeded
//! Fisher–Yates shuffle each epoch, so a run is bit-reproducible from the
//! config alone.

use super::loss::backward;
use super::{AlignError, AlignHeadParams, ProposalSample};
use crate::rng::{derive_seed, SplitMix64};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AlignTrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Scale on the deviation loss; in the full detector this balances it
    /// against the classification/regression losses.
    pub lambda: f64,
    pub hidden_dim: usize,
    /// Epochs at whose start the learning rate is multiplied by
    /// `lr_decay_factor` (the usual detector step schedule).
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
}

impl Default for AlignTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            lambda: 1.0,
            hidden_dim: 64,
            lr_decay_epochs: vec![16, 19],
            lr_decay_factor: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: AlignHeadParams,
    /// Mean (lambda-scaled) batch loss per epoch.
    pub loss_curve: Vec<f64>,
}

/// Trains a freshly initialized head on the dataset.
///
/// Parameter init uses `config.seed`; the shuffle stream is derived from it.
pub fn train(
    config: &AlignTrainConfig,
    dataset: &[ProposalSample],
) -> Result<TrainResult, AlignError> {
    assert!(!dataset.is_empty(), "training dataset must be nonempty");
    let input_dim = dataset[0].phi_r.len();
    let params = AlignHeadParams::init(input_dim, config.hidden_dim, config.seed);
    train_from(config, params, dataset)
}

/// Trains starting from the given parameters (used by warm restarts and the
/// lr=0 identity check).
pub fn train_from(
    config: &AlignTrainConfig,
    mut params: AlignHeadParams,
    dataset: &[ProposalSample],
) -> Result<TrainResult, AlignError> {
    assert!(!dataset.is_empty(), "training dataset must be nonempty");
    for sample in dataset {
        if sample.phi_r.len() != params.input_dim || sample.phi_s.len() != params.input_dim {
            return Err(AlignError::ShapeMismatch {
                got: sample.phi_r.len(),
                want: params.input_dim,
            });
        }
    }
    let mut velocity = params.zeros_like();
    let mut shuffle_rng = SplitMix64::new(derive_seed(config.seed, 0x5346));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut batch: Vec<ProposalSample> = Vec::with_capacity(config.batch_size);

    let mut lr = config.learning_rate;
    for epoch in 0..config.epochs {
        if config.lr_decay_epochs.contains(&epoch) {
            lr *= config.lr_decay_factor;
        }
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| dataset[i].clone()));
            let (grads, loss) = backward(&params, &batch);
            let loss = config.lambda * loss;
            if !loss.is_finite() {
                return Err(AlignError::NonFiniteLoss { epoch });
            }
            epoch_loss += loss;
            batches += 1;
            let g_tensors = grads.tensors();
            for (t_idx, (p, v)) in params
                .tensors_mut()
                .into_iter()
                .zip(velocity.tensors_mut())
                .enumerate()
            {
                let g = g_tensors[t_idx];
                for i in 0..p.len() {
                    let grad = config.lambda * g[i] + config.weight_decay * p[i];
                    v[i] = config.momentum * v[i] + grad;
                    p[i] -= lr * v[i];
                }
            }
        }
        if !params.all_finite() {
            return Err(AlignError::NonFiniteLoss { epoch });
        }
        loss_curve.push(epoch_loss / batches.max(1) as f64);
    }
    Ok(TrainResult { params, loss_curve })
}
