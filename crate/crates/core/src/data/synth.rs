//! Synthetic dual-domain dataset generator.
//!
//! Source cases are bright ellipsoidal lesions on a smooth dark background;
//! target cases come from a different geometry draw with inverted lesion
//! contrast, gamma-warped intensities and additive Gaussian noise. The two
//! cohorts are unpaired, the shift is large enough that a source-only model
//! transfers poorly, and every case gets a ground-truth label on disk
//! (target labels only enter evaluation).

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::stream_rng;
use crate::volume::{DomainTag, LabelMap, Volume3D};

use super::format::{write_label_map, write_volume};
use super::index::{CaseRecord, DatasetIndex, Split};

/// Per-domain intensity model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    /// Background level before gamma warping, in [0,1].
    pub base_intensity: f32,
    /// Signed lesion contrast added to the background level.
    pub lesion_contrast: f32,
    /// Intensity gamma; 1.0 leaves the curve linear.
    pub gamma: f32,
    /// Standard deviation of additive Gaussian noise.
    pub noise_sigma: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub train_per_domain: usize,
    pub val_per_domain: usize,
    pub test_per_domain: usize,
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    /// Inclusive range of lesions per case.
    pub lesion_count: [usize; 2],
    /// Range of ellipsoid semi-axes in voxels.
    pub lesion_radius: [f32; 2],
    pub source: Appearance,
    pub target: Appearance,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train_per_domain: 32,
            val_per_domain: 0,
            test_per_domain: 8,
            dims: [32, 32, 32],
            spacing: [1.0, 1.0, 1.0],
            lesion_count: [1, 3],
            lesion_radius: [3.0, 5.0],
            source: Appearance {
                base_intensity: 0.30,
                lesion_contrast: 0.45,
                gamma: 1.0,
                noise_sigma: 0.01,
            },
            target: Appearance {
                base_intensity: 0.72,
                lesion_contrast: -0.38,
                gamma: 1.6,
                noise_sigma: 0.03,
            },
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 16) {
            return Err(Error::invalid(format!("synthetic dims must be >= 16 per axis, got {:?}", self.dims)));
        }
        if self.lesion_radius[0] <= 0.0 || self.lesion_radius[1] < self.lesion_radius[0] {
            return Err(Error::invalid(format!("bad lesion radius range {:?}", self.lesion_radius)));
        }
        if self.lesion_count[1] < self.lesion_count[0] {
            return Err(Error::invalid(format!("bad lesion count range {:?}", self.lesion_count)));
        }
        let margin = 2 * self.lesion_radius[1].ceil() as usize + 1;
        if self.dims.iter().any(|&d| d < margin) {
            return Err(Error::invalid(format!(
                "lesion radius {:?} does not fit dims {:?}",
                self.lesion_radius, self.dims
            )));
        }
        if self.train_per_domain == 0 {
            return Err(Error::invalid("train_per_domain must be >= 1"));
        }
        Ok(())
    }
}

struct Lesion {
    center: (f64, f64, f64),
    radii: (f64, f64, f64),
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; one draw pair per sample keeps the stream layout simple.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// One synthetic case: intensity volume plus ground-truth labels.
pub fn synth_case(spec: &SyntheticSpec, appearance: &Appearance, case_id: &str) -> (Volume3D<f32>, LabelMap) {
    let mut rng = stream_rng(spec.seed, &format!("synth/{case_id}"));
    let (d, h, w) = (spec.dims[0], spec.dims[1], spec.dims[2]);

    // Smooth background: a few low-frequency cosines with random phase.
    let mut waves = Vec::new();
    for _ in 0..3 {
        let fz = rng.random_range(0.5..2.0);
        let fy = rng.random_range(0.5..2.0);
        let fx = rng.random_range(0.5..2.0);
        let phase = rng.random_range(0.0..(2.0 * PI));
        let amp = rng.random_range(0.02..0.05);
        waves.push((fz, fy, fx, phase, amp));
    }

    let count = rng.random_range(spec.lesion_count[0]..=spec.lesion_count[1]);
    let mut lesions = Vec::with_capacity(count);
    for _ in 0..count {
        let rz = rng.random_range(spec.lesion_radius[0]..=spec.lesion_radius[1]) as f64;
        let ry = rng.random_range(spec.lesion_radius[0]..=spec.lesion_radius[1]) as f64;
        let rx = rng.random_range(spec.lesion_radius[0]..=spec.lesion_radius[1]) as f64;
        let cz = rng.random_range(rz.ceil()..(d as f64 - 1.0 - rz.ceil() + f64::EPSILON));
        let cy = rng.random_range(ry.ceil()..(h as f64 - 1.0 - ry.ceil() + f64::EPSILON));
        let cx = rng.random_range(rx.ceil()..(w as f64 - 1.0 - rx.ceil() + f64::EPSILON));
        lesions.push(Lesion {
            center: (cz, cy, cx),
            radii: (rz, ry, rx),
        });
    }

    let n = d * h * w;
    let mut data = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let mut intensity = appearance.base_intensity as f64;
                for &(fz, fy, fx, phase, amp) in &waves {
                    let arg = 2.0 * PI * (fz * z as f64 / d as f64 + fy * y as f64 / h as f64 + fx * x as f64 / w as f64)
                        + phase;
                    intensity += amp * arg.cos();
                }
                // Flat-core lesion profile with a thin fading rim.
                let mut profile = 0.0f64;
                let mut inside = false;
                for lesion in &lesions {
                    let dz = (z as f64 - lesion.center.0) / lesion.radii.0;
                    let dy = (y as f64 - lesion.center.1) / lesion.radii.1;
                    let dx = (x as f64 - lesion.center.2) / lesion.radii.2;
                    let rho2 = dz * dz + dy * dy + dx * dx;
                    if rho2 <= 1.0 {
                        inside = true;
                        profile = profile.max((4.0 * (1.0 - rho2)).clamp(0.0, 1.0));
                    }
                }
                intensity += appearance.lesion_contrast as f64 * profile;
                let warped = intensity.clamp(0.02, 0.98).powf(appearance.gamma as f64);
                let noisy = warped + appearance.noise_sigma as f64 * standard_normal(&mut rng);
                data.push(noisy as f32);
                labels.push(inside as u8);
            }
        }
    }
    let volume = Volume3D::new((d, h, w), (spec.spacing[0], spec.spacing[1], spec.spacing[2]), data)
        .expect("generator output is finite");
    let labels = LabelMap::new((d, h, w), 2, labels).expect("generator labels are binary");
    (volume, labels)
}

fn case_stub(domain: DomainTag, split: Split, i: usize) -> String {
    let prefix = match domain {
        DomainTag::Source => "src",
        DomainTag::Target => "tgt",
    };
    format!("{prefix}_{}_{i:03}", split.as_str())
}

/// Generates the full dual-domain dataset under `out_dir` and returns its
/// index. Ground-truth labels are written for every case; target-train
/// records carry no label path so training can never see them.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<DatasetIndex> {
    spec.validate()?;
    let mut records = Vec::new();
    let splits = [
        (Split::Train, spec.train_per_domain),
        (Split::Val, spec.val_per_domain),
        (Split::Test, spec.test_per_domain),
    ];
    for domain in [DomainTag::Source, DomainTag::Target] {
        let appearance = match domain {
            DomainTag::Source => &spec.source,
            DomainTag::Target => &spec.target,
        };
        for (split, count) in splits {
            for i in 0..count {
                let case_id = case_stub(domain, split, i);
                let (volume, labels) = synth_case(spec, appearance, &case_id);
                let vol_stem = out_dir.join(format!("{case_id}_vol"));
                let label_stem = out_dir.join(format!("{case_id}_label"));
                write_volume(&volume, &vol_stem)?;
                write_label_map(&labels, volume.spacing(), &label_stem)?;
                let expose_label = !(domain == DomainTag::Target && split == Split::Train);
                records.push(CaseRecord {
                    case_id,
                    volume: vol_stem,
                    label: expose_label.then_some(label_stem),
                    domain,
                    split,
                });
            }
        }
    }
    DatasetIndex::new(records)
}

/// Stem of the on-disk ground-truth label for any case, including
/// target-train cases whose index records hide it.
pub fn ground_truth_stem(out_dir: &Path, case_id: &str) -> PathBuf {
    out_dir.join(format!("{case_id}_label"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes() {
        let spec = SyntheticSpec {
            train_per_domain: 2,
            test_per_domain: 1,
            dims: [16, 16, 16],
            ..Default::default()
        };
        let (v1, l1) = synth_case(&spec, &spec.source, "src_train_000");
        let (v2, l2) = synth_case(&spec, &spec.source, "src_train_000");
        assert_eq!(v1, v2);
        assert_eq!(l1, l2);
        let (v3, _) = synth_case(&spec, &spec.source, "src_train_001");
        assert_ne!(v1, v3);
    }

    #[test]
    fn zero_lesions_give_background_labels() {
        let spec = SyntheticSpec {
            lesion_count: [0, 0],
            dims: [16, 16, 16],
            ..Default::default()
        };
        let (_, labels) = synth_case(&spec, &spec.source, "case");
        assert!(labels.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn foreground_fraction_in_expected_band() {
        // Regression band for the default geometry (radius 3-5 ellipsoids,
        // 1-3 per 32^3 case); first measured mean was ~1.5%.
        let spec = SyntheticSpec::default();
        let mut total_fg = 0usize;
        let mut total = 0usize;
        for i in 0..32 {
            let (_, labels) = synth_case(&spec, &spec.source, &format!("frac_{i}"));
            total_fg += labels.labels().iter().filter(|&&l| l != 0).count();
            total += labels.labels().len();
        }
        let fraction = total_fg as f64 / total as f64;
        assert!(
            (0.002..=0.04).contains(&fraction),
            "foreground fraction {fraction} outside [0.2%, 4%]"
        );
    }

    #[test]
    fn radius_too_large_for_dims_is_rejected() {
        let spec = SyntheticSpec {
            dims: [16, 16, 16],
            lesion_radius: [7.0, 9.0],
            ..Default::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn domains_differ_in_contrast_direction() {
        let spec = SyntheticSpec {
            dims: [24, 24, 24],
            lesion_count: [1, 1],
            ..Default::default()
        };
        for (domain, appearance) in [(DomainTag::Source, &spec.source), (DomainTag::Target, &spec.target)] {
            let (v, l) = synth_case(&spec, appearance, "contrast_case");
            let mut fg_sum = 0.0f64;
            let mut fg_n = 0usize;
            let mut bg_sum = 0.0f64;
            let mut bg_n = 0usize;
            for (val, &lab) in v.data().iter().zip(l.labels()) {
                if lab != 0 {
                    fg_sum += *val as f64;
                    fg_n += 1;
                } else {
                    bg_sum += *val as f64;
                    bg_n += 1;
                }
            }
            let delta = fg_sum / fg_n as f64 - bg_sum / bg_n as f64;
            match domain {
                DomainTag::Source => assert!(delta > 0.05, "source lesions should be bright, delta {delta}"),
                DomainTag::Target => assert!(delta < -0.05, "target lesions should be dark, delta {delta}"),
            }
        }
    }
}
