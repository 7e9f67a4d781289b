//! Dataset handling: the on-disk volume format, dataset indices,
//! preprocessing, patch sampling and the synthetic dual-domain generator.

pub mod format;
pub mod index;
pub mod patch;
pub mod preprocess;
pub mod synth;

pub use format::{read_label_map, read_volume, write_label_map, write_volume};
pub use index::{CaseRecord, DatasetIndex, Split};
pub use patch::{sample_patch, PatchSample};
pub use preprocess::{crop_to_roi, pad_reflect_to, trim_slices, znorm, BBox, CroppedVolume};
pub use synth::{generate_synthetic, Appearance, SyntheticSpec};
