//! Pseudo-label filtering quantities.
//!
//! Image level: the summed foreground-probability variance of the Monte
//! Carlo predictions, normalized by the estimated size of the uncertain
//! region (high-entropy voxel count), turned into a per-case weight by
//! min-max scaling across the cohort. Pixel level: the consensus between
//! the target-branch prediction and the prediction on the back-translated
//! volume. Scalars accumulate in f64 on top of the f32 maps.

use crate::error::{Error, Result};
use crate::volume::{ensure_same_dims, LabelMap, ProbabilityMap, WeightMap};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FilterConfig {
    /// Monte Carlo dropout passes.
    pub k: usize,
    /// Normalized-entropy threshold for the uncertain-region count.
    pub e: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { k: 5, e: 0.2 }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid(format!("FilterConfig: K must be >= 2, got {}", self.k)));
        }
        if !(0.0..1.0).contains(&self.e) {
            return Err(Error::invalid(format!("FilterConfig: e must be in [0,1), got {}", self.e)));
        }
        Ok(())
    }
}

fn check_stack(maps: &[ProbabilityMap<f32>]) -> Result<()> {
    if maps.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 Monte Carlo maps, got {}",
            maps.len()
        )));
    }
    let first = &maps[0];
    for m in &maps[1..] {
        ensure_same_dims("mc stack", first.dims(), m.dims())?;
        if m.num_classes() != first.num_classes() {
            return Err(Error::shape(
                "mc stack",
                format!("{} classes", first.num_classes()),
                format!("{} classes", m.num_classes()),
            ));
        }
    }
    Ok(())
}

/// Voxelwise arithmetic mean of the K probability maps.
pub fn mean_probability(maps: &[ProbabilityMap<f32>]) -> Result<ProbabilityMap<f32>> {
    check_stack(maps)?;
    let k = maps.len() as f64;
    let len = maps[0].data().len();
    let mut mean = vec![0.0f32; len];
    for (i, slot) in mean.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for m in maps {
            acc += m.data()[i] as f64;
        }
        *slot = (acc / k) as f32;
    }
    ProbabilityMap::from_raw(maps[0].dims(), maps[0].num_classes(), mean)
}

/// Per-voxel population variance of the foreground probability across the
/// K maps; with several foreground classes, the mean of their per-class
/// variances.
pub fn variance_map(maps: &[ProbabilityMap<f32>]) -> Result<WeightMap<f32>> {
    check_stack(maps)?;
    let k = maps.len() as f64;
    let c = maps[0].num_classes();
    let n = maps[0].num_voxels();
    let fg_classes = c - 1;
    let mut out = vec![0.0f32; n];
    for o in 0..n {
        let mut acc = 0.0f64;
        for ci in 1..c {
            let idx = ci * n + o;
            let mut mean = 0.0f64;
            for m in maps {
                mean += m.data()[idx] as f64;
            }
            mean /= k;
            let mut var = 0.0f64;
            for m in maps {
                let d = m.data()[idx] as f64 - mean;
                var += d * d;
            }
            acc += var / k;
        }
        out[o] = (acc / fg_classes as f64) as f32;
    }
    WeightMap::new(maps[0].dims(), out)
}

/// Naive image-level uncertainty: the sum of the variance map.
pub fn image_uncertainty_raw(variance: &WeightMap<f32>) -> f64 {
    variance.data().iter().map(|&v| v as f64).sum()
}

/// Normalized voxel entropy of the mean probability map, in [0, 1]:
/// `(-sum_c p ln p) / ln C`.
pub fn entropy_map(pbar: &ProbabilityMap<f32>) -> WeightMap<f32> {
    let c = pbar.num_classes();
    let n = pbar.num_voxels();
    let ln_c = (c as f64).ln();
    let mut out = vec![0.0f32; n];
    for (o, slot) in out.iter_mut().enumerate() {
        let mut h = 0.0f64;
        for ci in 0..c {
            let p = pbar.data()[ci * n + o] as f64;
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
        *slot = ((h / ln_c).max(0.0)) as f32;
    }
    WeightMap::new(pbar.dims(), out).expect("entropy values are finite and non-negative")
}

/// Count of voxels whose normalized entropy strictly exceeds `e` (the step
/// function is 0 at and below the threshold).
pub fn uncertain_region_size(pbar: &ProbabilityMap<f32>, e: f64) -> usize {
    let c = pbar.num_classes();
    let n = pbar.num_voxels();
    let ln_c = (c as f64).ln();
    let mut count = 0usize;
    for o in 0..n {
        let mut h = 0.0f64;
        for ci in 0..c {
            let p = pbar.data()[ci * n + o] as f64;
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
        if h / ln_c > e {
            count += 1;
        }
    }
    count
}

/// Size-aware image-level uncertainty over a cohort: `u = v / eta` when the
/// uncertain region is non-empty, otherwise the cohort maximum of those
/// ratios. If no case has an uncertain region, every u is 0.
pub fn image_uncertainty(cohort: &[(f64, usize)]) -> Vec<f64> {
    let u_star = cohort
        .iter()
        .filter(|(_, eta)| *eta > 0)
        .map(|(v, eta)| v / *eta as f64)
        .fold(f64::NEG_INFINITY, f64::max);
    if u_star == f64::NEG_INFINITY {
        return vec![0.0; cohort.len()];
    }
    cohort
        .iter()
        .map(|(v, eta)| if *eta > 0 { v / *eta as f64 } else { u_star })
        .collect()
}

/// Min-max image weights: `w = (u_max - u) / (u_max - u_min)`; all 1 when
/// the cohort is degenerate (u_max == u_min).
pub fn image_weights(us: &[f64]) -> Vec<f64> {
    if us.is_empty() {
        return Vec::new();
    }
    let u_max = us.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let u_min = us.iter().copied().fold(f64::INFINITY, f64::min);
    if u_max == u_min {
        return vec![1.0; us.len()];
    }
    us.iter().map(|u| (u_max - u) / (u_max - u_min)).collect()
}

/// Voxelwise agreement map: 1 where the two label maps agree, 0 elsewhere.
pub fn consensus_map(a: &LabelMap, b: &LabelMap) -> Result<WeightMap<f32>> {
    ensure_same_dims("consensus_map", a.dims(), b.dims())?;
    let data = a
        .labels()
        .iter()
        .zip(b.labels())
        .map(|(&x, &y)| if x == y { 1.0f32 } else { 0.0 })
        .collect();
    WeightMap::new(a.dims(), data)
}

/// Combined per-voxel weight `A = M * w`.
pub fn combined_weight_map(consensus: &WeightMap<f32>, w: f64) -> WeightMap<f32> {
    let data = consensus.data().iter().map(|&m| ((m as f64) * w) as f32).collect();
    WeightMap::new(consensus.dims(), data).expect("product of [0,1] values stays in [0,1]")
}
