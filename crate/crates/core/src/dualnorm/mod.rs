//! Dual-domain normalization: the segmentation backbone shared by the
//! pseudo-label generator and the final segmentor. Per-domain batch-norm
//! statistics, shared convolutions, dropout sites for Monte Carlo
//! uncertainty sampling.

pub mod bn;
pub mod segnet;
pub mod tiling;
pub mod train;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{Dims, DomainTag, ProbabilityMap, Volume3D};

pub use bn::{DualBn, DualBnCtx, BN_EPS, BN_MOMENTUM};
pub use segnet::{verify_manifest_compatible, DualDomainSegNet, SegNetConfig, DOWNSAMPLE_FACTOR};
pub use tiling::predict_volume;
pub use train::{train_segnet, DomainSet, SegEpochLoss, SegTrainConfig, TrainCase};

/// K stochastic forward passes with dropout active and frozen BN running
/// statistics. Reproducible: pass i uses a fixed substream of `rng`.
pub fn mc_dropout_predict<T: Real>(
    net: &DualDomainSegNet<T>,
    volume: &Volume3D<T>,
    domain: DomainTag,
    patch: Dims,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ProbabilityMap<T>>> {
    if k < 2 {
        return Err(Error::invalid(format!(
            "mc_dropout_predict: K must be >= 2 (variance needs samples), got {k}"
        )));
    }
    let mut maps = Vec::with_capacity(k);
    for _ in 0..k {
        let mut pass_rng = ChaCha8Rng::seed_from_u64(rng.random());
        maps.push(predict_volume(net, volume, domain, patch, Some(&mut pass_rng))?);
    }
    Ok(maps)
}
