//! Unsupervised cross-modality adaptation for 3D segmentation.
//!
//! The pipeline turns a labeled source-domain cohort and an unlabeled
//! target-domain cohort into a target-domain segmentor in four stages:
//!
//! 1. [`translate`] — unpaired slice-wise translation between the two
//!    domains plus cross-domain data augmentation of the labeled set.
//! 2. [`dualnorm`] — a segmentation network with per-domain batch
//!    normalization statistics shared by the pseudo-label generator and the
//!    final segmentor.
//! 3. [`pseudolabel`] — pseudo-label generation for the target cohort with
//!    uncertainty- and consensus-based filtering.
//! 4. [`jointtrain`] — joint training of the final segmentor on labeled
//!    source data and weighted pseudo-labeled target data, plus tiled
//!    inference.
//!
//! [`data`] provides the on-disk volume format, preprocessing and a synthetic
//! dual-domain dataset generator; [`metrics`] and [`losses`] hold the
//! segmentation metrics and training losses. All numeric code is generic
//! over the scalar type via [`scalar::Real`]; the pipeline itself runs f32
//! (see the aliases at the crate root), f64 instantiations back the
//! finite-difference tests.

pub mod data;
pub mod dualnorm;
pub mod error;
pub mod jointtrain;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod pseudolabel;
pub mod scalar;
pub mod seeds;
pub mod translate;
pub mod volume;

pub use error::{Error, Result};
pub use scalar::Real;
pub use volume::{DomainTag, LabelMap, ProbabilityMap, Volume3D, WeightMap};

/// Pipeline-precision volume.
pub type Volume3D32 = Volume3D<f32>;
/// Pipeline-precision probability map.
pub type ProbabilityMap32 = ProbabilityMap<f32>;
/// Pipeline-precision weight map.
pub type WeightMap32 = WeightMap<f32>;
