//! Final segmentor: initialized from the pseudo-label generator, trained
//! jointly on labeled source cases and weighted pseudo-labeled target
//! cases, then applied to the target domain with tiled inference.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dualnorm::{predict_volume, train_segnet, DomainSet, DualDomainSegNet, SegEpochLoss, SegNetConfig, SegTrainConfig};
use crate::error::{Error, Result};
use crate::volume::{Dims, DomainTag, LabelMap, Volume3D};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_per_domain: usize,
    pub patch: (usize, usize, usize),
    pub init_from_generator: bool,
}

impl Default for JointTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 1e-3,
            batch_per_domain: 2,
            patch: (16, 16, 16),
            init_from_generator: true,
        }
    }
}

impl JointTrainConfig {
    /// The segmentor trains for fewer epochs than the generator it starts
    /// from.
    pub fn validate_against_generator(&self, generator_epochs: usize) -> Result<()> {
        if self.epochs >= generator_epochs {
            return Err(Error::invalid(format!(
                "segmentor epochs ({}) must be < generator epochs ({})",
                self.epochs, generator_epochs
            )));
        }
        Ok(())
    }

    fn seg_train(&self) -> SegTrainConfig {
        SegTrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_per_domain: self.batch_per_domain,
            patch: self.patch,
        }
    }
}

/// Loads the generator checkpoint as the segmentor's starting point: every
/// parameter, both BN branches and all running statistics are copied.
/// The checkpoint architecture must match the expected configuration.
pub fn init_segmentor_from_generator(g_stem: &Path, expected: &SegNetConfig) -> Result<DualDomainSegNet<f32>> {
    let net = DualDomainSegNet::<f32>::load(g_stem)?;
    let mut fields = Vec::new();
    if net.cfg.num_classes != expected.num_classes {
        fields.push(format!(
            "num_classes: {} != {}",
            net.cfg.num_classes, expected.num_classes
        ));
    }
    if net.cfg.base_width != expected.base_width {
        fields.push(format!("base_width: {} != {}", net.cfg.base_width, expected.base_width));
    }
    if net.cfg.in_channels != expected.in_channels {
        fields.push(format!("in_channels: {} != {}", net.cfg.in_channels, expected.in_channels));
    }
    if !fields.is_empty() {
        return Err(Error::Incompatible { fields });
    }
    Ok(net)
}

/// Joint training: soft Dice on labeled source batches (d=s) plus weighted
/// Dice on pseudo-labeled target batches (d=t) whose per-patch weights are
/// spatial crops of the fixed per-case maps.
pub fn train_final_segmentor(
    segmentor: &mut DualDomainSegNet<f32>,
    source: &DomainSet,
    target: &DomainSet,
    cfg: &JointTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SegEpochLoss>> {
    if source.domain != DomainTag::Source || target.domain != DomainTag::Target {
        return Err(Error::invalid("train_final_segmentor: set domains must be (source, target)"));
    }
    if let Some(case) = target.cases.iter().find(|c| c.weights.is_none()) {
        return Err(Error::invalid(format!(
            "train_final_segmentor: target case `{}` has no weight map (records missing?)",
            case.case_id
        )));
    }
    train_segnet(segmentor, source, Some(target), &cfg.seg_train(), rng)
}

/// Source-only supervised training (the no-adaptation baseline); the
/// target branch is never touched.
pub fn train_source_only(
    segmentor: &mut DualDomainSegNet<f32>,
    source: &DomainSet,
    cfg: &JointTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SegEpochLoss>> {
    if source.domain != DomainTag::Source {
        return Err(Error::invalid("train_source_only takes a source-domain set"));
    }
    train_segnet(segmentor, source, None, &cfg.seg_train(), rng)
}

/// Plain supervised training on pseudo-labeled target cases with unit
/// weights and no source term (the unfiltered pseudo-label baseline).
pub fn train_pseudo_only(
    segmentor: &mut DualDomainSegNet<f32>,
    target: &DomainSet,
    cfg: &JointTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SegEpochLoss>> {
    if target.domain != DomainTag::Target {
        return Err(Error::invalid("train_pseudo_only takes a target-domain set"));
    }
    let unweighted = DomainSet {
        domain: target.domain,
        cases: target
            .cases
            .iter()
            .map(|c| crate::dualnorm::TrainCase {
                case_id: c.case_id.clone(),
                volume: c.volume.clone(),
                labels: c.labels.clone(),
                weights: None,
            })
            .collect(),
    };
    train_segnet(segmentor, &unweighted, None, &cfg.seg_train(), rng)
}

/// Deterministic target-domain inference: tiled forward with the
/// target-branch statistics, probability averaging in overlaps, argmax.
pub fn infer(net: &DualDomainSegNet<f32>, volume: &Volume3D<f32>, patch: Dims) -> Result<LabelMap> {
    let probs = predict_volume(net, volume, DomainTag::Target, patch, None)?;
    Ok(probs.argmax())
}
