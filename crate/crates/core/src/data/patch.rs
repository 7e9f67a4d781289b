//! Random patch sampling for training.
//!
//! Lesions occupy a few percent of a volume, so half of all draws force the
//! patch to contain a foreground voxel when labels are available; the other
//! half stay uniform.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{Dims, LabelMap, Volume3D, WeightMap};

use super::preprocess::pad_reflect_to;

/// A sampled patch and the corner it was cut from (coordinates in the
/// possibly padded volume).
#[derive(Debug, Clone)]
pub struct PatchSample<T: Real> {
    pub volume: Volume3D<T>,
    pub label: Option<LabelMap>,
    pub corner: (usize, usize, usize),
}

/// Copies the `patch_dims` region at `corner` out of a flat z-major array.
fn crop_flat<V: Copy>(data: &[V], dims: Dims, corner: (usize, usize, usize), patch: Dims) -> Vec<V> {
    let (_, h, w) = dims;
    let mut out = Vec::with_capacity(patch.0 * patch.1 * patch.2);
    for z in corner.0..corner.0 + patch.0 {
        for y in corner.1..corner.1 + patch.1 {
            let base = (z * h + y) * w + corner.2;
            out.extend_from_slice(&data[base..base + patch.2]);
        }
    }
    out
}

pub fn crop_volume<T: Real>(v: &Volume3D<T>, corner: (usize, usize, usize), patch: Dims) -> Result<Volume3D<T>> {
    check_corner("crop_volume", v.dims(), corner, patch)?;
    Volume3D::new(patch, v.spacing(), crop_flat(v.data(), v.dims(), corner, patch))
}

pub fn crop_labels(l: &LabelMap, corner: (usize, usize, usize), patch: Dims) -> Result<LabelMap> {
    check_corner("crop_labels", l.dims(), corner, patch)?;
    LabelMap::new(patch, l.num_classes(), crop_flat(l.labels(), l.dims(), corner, patch))
}

pub fn crop_weights<T: Real>(wm: &WeightMap<T>, corner: (usize, usize, usize), patch: Dims) -> Result<WeightMap<T>> {
    check_corner("crop_weights", wm.dims(), corner, patch)?;
    WeightMap::new(patch, crop_flat(wm.data(), wm.dims(), corner, patch))
}

fn check_corner(context: &str, dims: Dims, corner: (usize, usize, usize), patch: Dims) -> Result<()> {
    if corner.0 + patch.0 > dims.0 || corner.1 + patch.1 > dims.1 || corner.2 + patch.2 > dims.2 {
        return Err(Error::invalid(format!(
            "{context}: corner {corner:?} + patch {patch:?} exceeds dims {dims:?}"
        )));
    }
    Ok(())
}

fn pad_labels_like(labels: &LabelMap, padded_dims: Dims, offset: (usize, usize, usize)) -> LabelMap {
    let (d, h, w) = labels.dims();
    let mirror = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut j = i.rem_euclid(2 * n);
        if j >= n {
            j = 2 * n - 1 - j;
        }
        j as usize
    };
    let mut out = Vec::with_capacity(padded_dims.0 * padded_dims.1 * padded_dims.2);
    for z in 0..padded_dims.0 {
        let sz = mirror(z as isize - offset.0 as isize, d);
        for y in 0..padded_dims.1 {
            let sy = mirror(y as isize - offset.1 as isize, h);
            for x in 0..padded_dims.2 {
                let sx = mirror(x as isize - offset.2 as isize, w);
                out.push(labels.at(sz, sy, sx));
            }
        }
    }
    LabelMap::new(padded_dims, labels.num_classes(), out).expect("padded labels stay in range")
}

/// Draws one patch. The corner is uniform; with probability 0.5 it is
/// re-drawn around a random foreground voxel when `labels` has any.
/// Volumes smaller than the patch are reflect-padded first.
pub fn sample_patch<T: Real, R: Rng>(
    v: &Volume3D<T>,
    labels: Option<&LabelMap>,
    patch: Dims,
    rng: &mut R,
) -> Result<PatchSample<T>> {
    if let Some(l) = labels {
        if l.dims() != v.dims() {
            return Err(Error::shape(
                "sample_patch",
                format!("{:?}", v.dims()),
                format!("{:?}", l.dims()),
            ));
        }
    }
    let (padded, offset) = pad_reflect_to(v, patch);
    let padded_labels = labels.map(|l| {
        if padded.dims() == l.dims() {
            l.clone()
        } else {
            pad_labels_like(l, padded.dims(), offset)
        }
    });
    let dims = padded.dims();
    let range = (dims.0 - patch.0, dims.1 - patch.1, dims.2 - patch.2);
    let mut corner = (
        rng.random_range(0..=range.0),
        rng.random_range(0..=range.1),
        rng.random_range(0..=range.2),
    );
    if let Some(l) = &padded_labels {
        let force = rng.random_bool(0.5);
        if force {
            let fg_count = l.labels().iter().filter(|&&v| v != 0).count();
            if fg_count > 0 {
                let pick = rng.random_range(0..fg_count);
                let flat = l
                    .labels()
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0)
                    .nth(pick)
                    .map(|(i, _)| i)
                    .expect("fg voxel exists");
                let (h, w) = (dims.1, dims.2);
                let vz = flat / (h * w);
                let vy = (flat / w) % h;
                let vx = flat % w;
                let axis = |idx: usize, p: usize, hi: usize| -> (usize, usize) {
                    (idx.saturating_sub(p - 1), idx.min(hi))
                };
                let (lo_z, hi_z) = axis(vz, patch.0, range.0);
                let (lo_y, hi_y) = axis(vy, patch.1, range.1);
                let (lo_x, hi_x) = axis(vx, patch.2, range.2);
                corner = (
                    rng.random_range(lo_z..=hi_z),
                    rng.random_range(lo_y..=hi_y),
                    rng.random_range(lo_x..=hi_x),
                );
            }
        }
    }
    Ok(PatchSample {
        volume: crop_volume(&padded, corner, patch)?,
        label: padded_labels
            .as_ref()
            .map(|l| crop_labels(l, corner, patch))
            .transpose()?,
        corner,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn volume(dims: Dims, seed: u64) -> Volume3D<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.0 * dims.1 * dims.2;
        Volume3D::new(dims, (1.0, 1.0, 1.0), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn full_size_patch_is_whole_volume() {
        let v = volume((4, 4, 4), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = sample_patch(&v, None, (4, 4, 4), &mut rng).unwrap();
        assert_eq!(p.volume, v);
        assert_eq!(p.corner, (0, 0, 0));
    }

    #[test]
    fn fixed_seed_reproduces_patch() {
        let v = volume((10, 10, 10), 3);
        let a = sample_patch(&v, None, (4, 4, 4), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_patch(&v, None, (4, 4, 4), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.volume, b.volume);
        assert_eq!(a.corner, b.corner);
    }

    #[test]
    fn small_volume_is_reflect_padded() {
        let v = volume((2, 6, 6), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = sample_patch(&v, None, (4, 4, 4), &mut rng).unwrap();
        assert_eq!(p.volume.dims(), (4, 4, 4));
    }

    #[test]
    fn foreground_forcing_hits_lone_voxel_often() {
        let dims = (8, 8, 8);
        let v = volume(dims, 6);
        let mut labels = vec![0u8; 512];
        labels[(1 * 8 + 1) * 8 + 1] = 1;
        let l = LabelMap::new(dims, 2, labels).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut hits = 0usize;
        for _ in 0..1000 {
            let p = sample_patch(&v, Some(&l), (4, 4, 4), &mut rng).unwrap();
            if p.label.as_ref().unwrap().labels().iter().any(|&x| x != 0) {
                hits += 1;
            }
        }
        assert!(hits >= 400, "only {hits}/1000 patches contained the voxel");
    }

    #[test]
    fn label_patch_aligns_with_volume_patch() {
        let dims = (8, 8, 8);
        let v = volume(dims, 8);
        let labels: Vec<u8> = (0..512).map(|i| (i % 2) as u8).collect();
        let l = LabelMap::new(dims, 2, labels).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = sample_patch(&v, Some(&l), (3, 3, 3), &mut rng).unwrap();
        let (cz, cy, cx) = p.corner;
        for z in 0..3 {
            for y in 0..3 {
                for x in 0..3 {
                    assert_eq!(p.volume.at(z, y, x), v.at(cz + z, cy + y, cx + x));
                    assert_eq!(p.label.as_ref().unwrap().at(z, y, x), l.at(cz + z, cy + y, cx + x));
                }
            }
        }
    }
}
