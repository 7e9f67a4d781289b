//! Pseudo-label generation and filtering: train the dual-domain generator
//! on the augmented sets, predict the unlabeled target cohort with Monte
//! Carlo dropout, and derive image-level and pixel-level weights that gate
//! the pseudo labels during final training.

pub mod filter;
pub mod records;

use rand_chacha::ChaCha8Rng;

use crate::dualnorm::{train_segnet, DomainSet, DualDomainSegNet, SegEpochLoss, SegNetConfig, SegTrainConfig};
use crate::error::{Error, Result};
use crate::volume::DomainTag;

pub use filter::{
    combined_weight_map, consensus_map, entropy_map, image_uncertainty, image_uncertainty_raw, image_weights,
    mean_probability, uncertain_region_size, variance_map, FilterConfig,
};
pub use records::{build_records, load_record, record_dir, save_record, PseudoLabelRecord, StoredRecord};

/// Trains the pseudo-label generator on the augmented dual-domain sets:
/// the source-style set routes d=s, the pseudo-target set d=t, and the two
/// Dice terms are weighted equally.
pub fn train_generator(
    ss: &DomainSet,
    st: &DomainSet,
    net_cfg: SegNetConfig,
    train_cfg: &SegTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(DualDomainSegNet<f32>, Vec<SegEpochLoss>)> {
    if ss.domain != DomainTag::Source || st.domain != DomainTag::Target {
        return Err(Error::invalid("train_generator: ss must be source-routed and st target-routed"));
    }
    if ss.cases.is_empty() || st.cases.is_empty() {
        return Err(Error::invalid("train_generator: both augmented sets must be non-empty"));
    }
    let mut net = DualDomainSegNet::<f32>::new(net_cfg, rng);
    let history = train_segnet(&mut net, ss, Some(st), train_cfg, rng)?;
    Ok((net, history))
}
