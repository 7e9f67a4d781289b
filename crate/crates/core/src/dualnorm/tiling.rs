//! Sliding-window volume inference: 50% overlap along z, 25% in-plane,
//! uniform averaging of probabilities in the overlaps.

use rand_chacha::ChaCha8Rng;

use crate::data::preprocess::pad_reflect_to;
use crate::error::Result;
use crate::nn::tensor::Tensor;
use crate::scalar::{real, Real};
use crate::volume::{Dims, DomainTag, ProbabilityMap, Volume3D};

use super::segnet::DualDomainSegNet;

/// Window start offsets covering `extent` with the given step; the final
/// window is clamped so the far edge is always covered.
pub fn tile_starts(extent: usize, patch: usize, step: usize) -> Vec<usize> {
    assert!(patch <= extent && step >= 1);
    let mut starts = Vec::new();
    let mut s = 0usize;
    loop {
        if s + patch >= extent {
            starts.push(extent - patch);
            break;
        }
        starts.push(s);
        s += step;
    }
    starts.dedup();
    starts
}

fn patch_tensor<T: Real>(v: &Volume3D<T>, corner: (usize, usize, usize), patch: Dims) -> Tensor<T> {
    let (_, h, w) = v.dims();
    let mut data = Vec::with_capacity(patch.0 * patch.1 * patch.2);
    for z in corner.0..corner.0 + patch.0 {
        for y in corner.1..corner.1 + patch.1 {
            let base = (z * h + y) * w + corner.2;
            data.extend_from_slice(&v.data()[base..base + patch.2]);
        }
    }
    Tensor::new(vec![1, 1, patch.0, patch.1, patch.2], data)
}

/// Full-volume class probabilities via tiled inference. `mc_rng` switches
/// dropout on for one Monte Carlo sample; `None` is the deterministic path.
/// Volumes smaller than the patch are reflect-padded and cropped back.
pub fn predict_volume<T: Real>(
    net: &DualDomainSegNet<T>,
    volume: &Volume3D<T>,
    domain: DomainTag,
    patch: Dims,
    mut mc_rng: Option<&mut ChaCha8Rng>,
) -> Result<ProbabilityMap<T>> {
    net.check_patch_dims(patch)?;
    let (padded, offset) = pad_reflect_to(volume, patch);
    let dims = padded.dims();
    let c = net.cfg.num_classes;
    let n_vox = dims.0 * dims.1 * dims.2;
    let mut prob_sum = vec![T::zero(); c * n_vox];
    let mut counts = vec![0u32; n_vox];

    let z_starts = tile_starts(dims.0, patch.0, (patch.0 / 2).max(1));
    let y_starts = tile_starts(dims.1, patch.1, (patch.1 * 3 / 4).max(1));
    let x_starts = tile_starts(dims.2, patch.2, (patch.2 * 3 / 4).max(1));
    let patch_vox = patch.0 * patch.1 * patch.2;

    for &z0 in &z_starts {
        for &y0 in &y_starts {
            for &x0 in &x_starts {
                let input = patch_tensor(&padded, (z0, y0, x0), patch);
                let probs = net.forward_eval(&input, domain, mc_rng.as_deref_mut())?;
                let pv = probs.data();
                for ci in 0..c {
                    let cbase = ci * patch_vox;
                    for pz in 0..patch.0 {
                        for py in 0..patch.1 {
                            let src = cbase + (pz * patch.1 + py) * patch.2;
                            let dst = ci * n_vox + ((z0 + pz) * dims.1 + (y0 + py)) * dims.2 + x0;
                            for px in 0..patch.2 {
                                prob_sum[dst + px] += pv[src + px];
                            }
                        }
                    }
                }
                for pz in 0..patch.0 {
                    for py in 0..patch.1 {
                        let dst = ((z0 + pz) * dims.1 + (y0 + py)) * dims.2 + x0;
                        for px in 0..patch.2 {
                            counts[dst + px] += 1;
                        }
                    }
                }
            }
        }
    }

    for ci in 0..c {
        for o in 0..n_vox {
            let cnt: T = real(counts[o] as f64);
            prob_sum[ci * n_vox + o] /= cnt;
        }
    }

    // Crop back to the original grid if padding was applied.
    let orig = volume.dims();
    if orig == dims {
        return ProbabilityMap::from_raw(dims, c, prob_sum);
    }
    let n_orig = orig.0 * orig.1 * orig.2;
    let mut cropped = vec![T::zero(); c * n_orig];
    for ci in 0..c {
        for z in 0..orig.0 {
            for y in 0..orig.1 {
                for x in 0..orig.2 {
                    let src = ci * n_vox + ((z + offset.0) * dims.1 + (y + offset.1)) * dims.2 + (x + offset.2);
                    let dst = ci * n_orig + (z * orig.1 + y) * orig.2 + x;
                    cropped[dst] = prob_sum[src];
                }
            }
        }
    }
    ProbabilityMap::from_raw(orig, c, cropped)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tile_starts_cover_extent_with_expected_overlap() {
        assert_eq!(tile_starts(32, 16, 8), vec![0, 8, 16]);
        assert_eq!(tile_starts(32, 16, 12), vec![0, 12, 16]);
        assert_eq!(tile_starts(16, 16, 8), vec![0]);
        let starts = tile_starts(33, 16, 12);
        assert_eq!(*starts.last().unwrap(), 17);
    }
}
