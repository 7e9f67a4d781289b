//! Pipeline configuration: one TOML file with a flat `[stage.<name>]`
//! section per stage. Every field has a default, so an empty file is a
//! valid configuration; `--print-config` shows the effective values.

use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use adaseg_core::data::SyntheticSpec;
use adaseg_core::translate::GanVariant;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed; every stage derives a named substream from it.
    pub seed: u64,
    pub num_classes: usize,
    pub stage: Stages,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    pub synth: SynthConfig,
    pub translate: TranslateConfig,
    pub train_generator: TrainGeneratorConfig,
    pub build_records: BuildRecordsConfig,
    pub train_segmentor: TrainSegmentorConfig,
    pub infer: InferConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_classes: 2,
            stage: Stages::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub train_per_domain: usize,
    pub val_per_domain: usize,
    pub test_per_domain: usize,
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    pub lesion_count: [usize; 2],
    pub lesion_radius: [f32; 2],
    pub source_base_intensity: f32,
    pub source_lesion_contrast: f32,
    pub source_gamma: f32,
    pub source_noise_sigma: f32,
    pub target_base_intensity: f32,
    pub target_lesion_contrast: f32,
    pub target_gamma: f32,
    pub target_noise_sigma: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let spec = SyntheticSpec::default();
        Self {
            train_per_domain: spec.train_per_domain,
            val_per_domain: spec.val_per_domain,
            test_per_domain: spec.test_per_domain,
            dims: spec.dims,
            spacing: spec.spacing,
            lesion_count: spec.lesion_count,
            lesion_radius: spec.lesion_radius,
            source_base_intensity: spec.source.base_intensity,
            source_lesion_contrast: spec.source.lesion_contrast,
            source_gamma: spec.source.gamma,
            source_noise_sigma: spec.source.noise_sigma,
            target_base_intensity: spec.target.base_intensity,
            target_lesion_contrast: spec.target.lesion_contrast,
            target_gamma: spec.target.gamma,
            target_noise_sigma: spec.target.noise_sigma,
        }
    }
}

impl SynthConfig {
    pub fn to_spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            train_per_domain: self.train_per_domain,
            val_per_domain: self.val_per_domain,
            test_per_domain: self.test_per_domain,
            dims: self.dims,
            spacing: self.spacing,
            lesion_count: self.lesion_count,
            lesion_radius: self.lesion_radius,
            source: adaseg_core::data::Appearance {
                base_intensity: self.source_base_intensity,
                lesion_contrast: self.source_lesion_contrast,
                gamma: self.source_gamma,
                noise_sigma: self.source_noise_sigma,
            },
            target: adaseg_core::data::Appearance {
                base_intensity: self.target_base_intensity,
                lesion_contrast: self.target_lesion_contrast,
                gamma: self.target_gamma,
                noise_sigma: self.target_noise_sigma,
            },
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslateConfig {
    pub epochs: usize,
    pub lambda_cyc: f64,
    pub lr: f64,
    pub batch_slices: usize,
    /// 0 = one full pass over the smaller slice pool per epoch.
    pub steps_per_epoch: usize,
    pub translator_width: usize,
    pub discriminator_width: usize,
    pub gan: GanVariant,
    /// Discriminator learning rate relative to `lr`.
    pub d_lr_scale: f64,
    /// Update the discriminators every n-th step.
    pub d_every: usize,
}

impl Default for TranslateConfig {
    fn default() -> Self {
        Self {
            epochs: 9,
            lambda_cyc: 10.0,
            lr: 2e-4,
            batch_slices: 4,
            steps_per_epoch: 0,
            translator_width: 8,
            discriminator_width: 8,
            gan: GanVariant::Log,
            d_lr_scale: 1.0,
            d_every: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainGeneratorConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_per_domain: usize,
    pub patch: [usize; 3],
    pub base_width: usize,
    pub dropout_rate: f64,
}

impl Default for TrainGeneratorConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-3,
            batch_per_domain: 2,
            patch: [16, 16, 16],
            base_width: 8,
            dropout_rate: 0.3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildRecordsConfig {
    pub k: usize,
    pub e: f64,
}

impl Default for BuildRecordsConfig {
    fn default() -> Self {
        Self { k: 5, e: 0.2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSegmentorConfig {
    /// 0 = half the generator epochs.
    pub epochs: usize,
    pub lr: f64,
    pub batch_per_domain: usize,
    pub init_from_generator: bool,
}

impl Default for TrainSegmentorConfig {
    fn default() -> Self {
        Self {
            epochs: 0,
            lr: 1e-3,
            batch_per_domain: 2,
            init_from_generator: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    /// Which target split to predict.
    pub split: String,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self { split: "test".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub split: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { split: "test".into() }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: PipelineConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.num_classes < 2 {
            bail!("num_classes must be >= 2");
        }
        if self.stage.translate.epochs < 3 {
            bail!("stage.translate.epochs must be >= 3 (interior auxiliary checkpoint)");
        }
        let seg_epochs = self.segmentor_epochs();
        if seg_epochs >= self.stage.train_generator.epochs {
            bail!(
                "stage.train_segmentor.epochs ({seg_epochs}) must be < stage.train_generator.epochs ({})",
                self.stage.train_generator.epochs
            );
        }
        for (axis, extent) in ["z", "y", "x"].iter().zip(self.stage.train_generator.patch) {
            if extent % 8 != 0 {
                bail!("stage.train_generator.patch {axis} extent {extent} must be divisible by 8");
            }
        }
        Ok(())
    }

    /// Effective segmentor epochs: configured value, or half the generator
    /// epochs when left at 0.
    pub fn segmentor_epochs(&self) -> usize {
        if self.stage.train_segmentor.epochs > 0 {
            self.stage.train_segmentor.epochs
        } else {
            (self.stage.train_generator.epochs / 2).max(1)
        }
    }

    pub fn patch(&self) -> (usize, usize, usize) {
        let p = self.stage.train_generator.patch;
        (p[0], p[1], p[2])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg: PipelineConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.stage.build_records.k, 5);
        assert_eq!(cfg.stage.build_records.e, 0.2);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = toml::from_str::<PipelineConfig>("[stage.synth]\nnot_a_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("not_a_key"), "{err}");
    }

    #[test]
    fn segmentor_epochs_default_to_half_generator() {
        let cfg: PipelineConfig = toml::from_str("[stage.train_generator]\nepochs = 30\n").unwrap();
        assert_eq!(cfg.segmentor_epochs(), 15);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg.seed, back.seed);
        assert_eq!(cfg.stage.translate.epochs, back.stage.translate.epochs);
    }
}
