//! Patch-based training engine for the dual-domain network.
//!
//! One optimization step draws one mini-batch per participating domain,
//! routes each through its BN branch, sums the per-domain Dice terms and
//! applies a single Adam update — so both branches receive statistics every
//! cycle and the logged step loss decomposes exactly into its terms.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::patch::{crop_weights, sample_patch};
use crate::error::{Error, Result};
use crate::losses::{soft_dice_with_grad_raw, weighted_dice_with_grad_raw};
use crate::nn::adam::Adam;
use crate::nn::tensor::Tensor;
use crate::volume::{Dims, DomainTag, LabelMap, ProbabilityMap, Volume3D, WeightMap};

use super::segnet::DualDomainSegNet;

/// One training case: preprocessed volume, supervision labels (ground truth
/// or pseudo), and an optional per-voxel weight map gating the Dice loss.
#[derive(Debug, Clone)]
pub struct TrainCase {
    pub case_id: String,
    pub volume: Volume3D<f32>,
    pub labels: LabelMap,
    pub weights: Option<WeightMap<f32>>,
}

/// A training set routed through one BN branch.
#[derive(Debug, Clone)]
pub struct DomainSet {
    pub domain: DomainTag,
    pub cases: Vec<TrainCase>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_per_domain: usize,
    pub patch: (usize, usize, usize),
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-3,
            batch_per_domain: 2,
            patch: (16, 16, 16),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegEpochLoss {
    pub epoch: usize,
    /// Mean Dice term of the first set over the epoch.
    pub term_a: f64,
    /// Mean Dice term of the second set (0 when training single-domain).
    pub term_b: f64,
    pub total: f64,
}

struct Batch {
    input: Tensor<f32>,
    target_onehot: Vec<f32>,
    weights: Option<Vec<f32>>,
}

fn assemble_batch(
    set: &DomainSet,
    order: &[usize],
    step: usize,
    batch: usize,
    patch: Dims,
    num_classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    let n_vox = patch.0 * patch.1 * patch.2;
    let mut input = Vec::with_capacity(batch * n_vox);
    let mut target = Vec::with_capacity(batch * num_classes * n_vox);
    let mut weights = if set.cases.iter().any(|c| c.weights.is_some()) {
        Some(Vec::with_capacity(batch * n_vox))
    } else {
        None
    };
    for i in 0..batch {
        let case = &set.cases[order[(step * batch + i) % order.len()]];
        let sample = sample_patch(&case.volume, Some(&case.labels), patch, rng)?;
        input.extend_from_slice(sample.volume.data());
        let onehot = ProbabilityMap::<f32>::one_hot(sample.label.as_ref().expect("labels supplied"));
        target.extend_from_slice(onehot.data());
        if let Some(w) = &mut weights {
            let map = match &case.weights {
                Some(full) => crop_weights(full, sample.corner, patch)?.data().to_vec(),
                None => vec![1.0f32; n_vox],
            };
            w.extend_from_slice(&map);
        }
    }
    Ok(Batch {
        input: Tensor::new(vec![batch, 1, patch.0, patch.1, patch.2], input),
        target_onehot: target,
        weights,
    })
}

/// Per-batch Dice loss and dL/dprobs: mean over batch samples of the
/// per-sample (optionally weighted) soft Dice.
fn batch_loss_and_grad(
    probs: &Tensor<f32>,
    batch: &Batch,
    num_classes: usize,
    n_vox: usize,
) -> (f64, Tensor<f32>) {
    let b = probs.dim(0);
    let inv_b = 1.0f32 / b as f32;
    let mut total = 0.0f64;
    let mut grad = Tensor::<f32>::zeros(probs.shape().to_vec());
    for s in 0..b {
        let base = s * num_classes * n_vox;
        let pred = &probs.data()[base..base + num_classes * n_vox];
        let target = &batch.target_onehot[base..base + num_classes * n_vox];
        let (loss, g) = match &batch.weights {
            Some(w) => weighted_dice_with_grad_raw(pred, target, &w[s * n_vox..(s + 1) * n_vox], n_vox, num_classes),
            None => soft_dice_with_grad_raw(pred, target, n_vox, num_classes),
        };
        total += loss as f64;
        for (dst, src) in grad.data_mut()[base..base + num_classes * n_vox].iter_mut().zip(&g) {
            *dst = src * inv_b;
        }
    }
    (total / b as f64, grad)
}

/// Trains the network on one or two domain sets. With two sets, each step
/// runs one batch per domain and a single optimizer update over the shared
/// weights and both BN branches; with one set, only that domain's branch is
/// ever touched.
pub fn train_segnet(
    net: &mut DualDomainSegNet<f32>,
    set_a: &DomainSet,
    set_b: Option<&DomainSet>,
    cfg: &SegTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SegEpochLoss>> {
    if set_a.cases.is_empty() || set_b.is_some_and(|s| s.cases.is_empty()) {
        return Err(Error::invalid("train_segnet: training sets must be non-empty"));
    }
    if cfg.batch_per_domain < 2 {
        return Err(Error::invalid("train_segnet: batch_per_domain must be >= 2 for batch statistics"));
    }
    net.check_patch_dims(cfg.patch)?;
    let num_classes = net.cfg.num_classes;
    let n_vox = cfg.patch.0 * cfg.patch.1 * cfg.patch.2;
    let mut opt = Adam::<f32>::new(cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut last_finite = vec![0.0f64; 2];

    for epoch in 1..=cfg.epochs {
        let mut order_a: Vec<usize> = (0..set_a.cases.len()).collect();
        order_a.shuffle(rng);
        let mut order_b: Vec<usize> = set_b.map(|s| (0..s.cases.len()).collect()).unwrap_or_default();
        if !order_b.is_empty() {
            order_b.shuffle(rng);
        }
        let steps = {
            let a_steps = set_a.cases.len().div_ceil(cfg.batch_per_domain);
            let b_steps = set_b.map(|s| s.cases.len().div_ceil(cfg.batch_per_domain)).unwrap_or(0);
            a_steps.max(b_steps).max(1)
        };
        let mut sum_a = 0.0f64;
        let mut sum_b = 0.0f64;

        for step in 0..steps {
            let batch_a = assemble_batch(set_a, &order_a, step, cfg.batch_per_domain, cfg.patch, num_classes, rng)?;
            let (probs_a, ctx_a) = net.forward_train(&batch_a.input, set_a.domain, rng)?;
            let (loss_a, grad_a) = batch_loss_and_grad(&probs_a, &batch_a, num_classes, n_vox);
            net.backward(&ctx_a, &grad_a);

            let loss_b = if let Some(set_b) = set_b {
                let batch_b = assemble_batch(set_b, &order_b, step, cfg.batch_per_domain, cfg.patch, num_classes, rng)?;
                let (probs_b, ctx_b) = net.forward_train(&batch_b.input, set_b.domain, rng)?;
                let (loss_b, grad_b) = batch_loss_and_grad(&probs_b, &batch_b, num_classes, n_vox);
                net.backward(&ctx_b, &grad_b);
                loss_b
            } else {
                0.0
            };

            if !loss_a.is_finite() || !loss_b.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    last_finite: last_finite.clone(),
                });
            }
            last_finite = vec![loss_a, loss_b];

            let params = match set_b {
                Some(set_b) if set_b.domain != set_a.domain => net.all_params_mut(),
                Some(_) | None => net.step_params_mut(set_a.domain),
            };
            opt.step(params.into_iter());
            net.zero_grads();
            sum_a += loss_a;
            sum_b += loss_b;
        }

        history.push(SegEpochLoss {
            epoch,
            term_a: sum_a / steps as f64,
            term_b: sum_b / steps as f64,
            total: (sum_a + sum_b) / steps as f64,
        });
    }
    Ok(history)
}

/// Mean soft-Dice loss of the network over whole cases, for validation
/// tracking (deterministic, running statistics).
pub fn eval_mean_dice_loss(
    net: &DualDomainSegNet<f32>,
    set: &DomainSet,
    patch: Dims,
) -> Result<f64> {
    let mut total = 0.0f64;
    for case in &set.cases {
        let probs = super::tiling::predict_volume(net, &case.volume, set.domain, patch, None)?;
        let onehot = ProbabilityMap::<f32>::one_hot(&case.labels);
        let loss = crate::losses::soft_dice_loss(&probs, &onehot)?;
        total += loss as f64;
    }
    Ok(total / set.cases.len() as f64)
}
