//! Unpaired cycle-consistent slice translation between the two domains and
//! the cross-domain data augmentation built on it.

pub mod cdda;
pub mod ckpt;
pub mod losses;
pub mod nets;
pub mod train;

pub use cdda::{cdda_augment, translate_volume, CddaOutput};
pub use ckpt::{load_translator_set, save_translator_set};
pub use losses::{adversarial_loss, cycle_loss, generator_adversarial_loss, GanVariant};
pub use nets::{DiscriminatorNet, SliceScorer, SliceTranslator, TranslatorNet};
pub use train::{auxiliary_epoch, train_cyclegan, CycleGanConfig, EpochLosses, TranslatorSet};
