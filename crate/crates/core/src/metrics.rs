//! Segmentation quality metrics: Dice overlap and average symmetric surface
//! distance in millimetres.

use crate::error::{Error, Result};
use crate::volume::{ensure_same_dims, Dims, LabelMap, Spacing};

fn check_class(context: &str, map: &LabelMap, class_index: usize) -> Result<()> {
    if class_index >= map.num_classes() {
        return Err(Error::invalid(format!(
            "{context}: class_index {class_index} >= num_classes {}",
            map.num_classes()
        )));
    }
    Ok(())
}

/// Dice overlap `2|P∩G| / (|P|+|G|)` of one class.
///
/// Two empty masks count as perfect agreement (1.0) so per-class averages
/// stay defined on cases where a structure is absent.
pub fn dice_score(pred: &LabelMap, gt: &LabelMap, class_index: usize) -> Result<f64> {
    ensure_same_dims("dice_score", pred.dims(), gt.dims())?;
    check_class("dice_score", pred, class_index)?;
    check_class("dice_score", gt, class_index)?;
    let c = class_index as u8;
    let mut inter = 0usize;
    let mut p_count = 0usize;
    let mut g_count = 0usize;
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        let pi = p == c;
        let gi = g == c;
        p_count += pi as usize;
        g_count += gi as usize;
        inter += (pi && gi) as usize;
    }
    if p_count == 0 && g_count == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p_count + g_count) as f64)
}

/// Binary foreground mask of one class, z-major.
fn class_mask(map: &LabelMap, class_index: usize) -> Vec<bool> {
    let c = class_index as u8;
    map.labels().iter().map(|&l| l == c).collect()
}

/// Surface voxels under 6-connectivity: foreground voxels with at least one
/// face neighbor outside the mask, where the volume border counts as outside.
fn surface_voxels(mask: &[bool], dims: Dims) -> Vec<(usize, usize, usize)> {
    let (d, h, w) = dims;
    let idx = |z: usize, y: usize, x: usize| (z * h + y) * w + x;
    let mut surface = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if !mask[idx(z, y, x)] {
                    continue;
                }
                let exposed = z == 0
                    || z == d - 1
                    || y == 0
                    || y == h - 1
                    || x == 0
                    || x == w - 1
                    || !mask[idx(z - 1, y, x)]
                    || !mask[idx(z + 1, y, x)]
                    || !mask[idx(z, y - 1, x)]
                    || !mask[idx(z, y + 1, x)]
                    || !mask[idx(z, y, x - 1)]
                    || !mask[idx(z, y, x + 1)];
                if exposed {
                    surface.push((z, y, x));
                }
            }
        }
    }
    surface
}

fn mean_min_distance(from: &[(usize, usize, usize)], to: &[(usize, usize, usize)], spacing: Spacing) -> f64 {
    let (sz, sy, sx) = (spacing.0 as f64, spacing.1 as f64, spacing.2 as f64);
    let mut total = 0.0f64;
    for &(az, ay, ax) in from {
        let mut best = f64::INFINITY;
        for &(bz, by, bx) in to {
            let dz = (az as f64 - bz as f64) * sz;
            let dy = (ay as f64 - by as f64) * sy;
            let dx = (ax as f64 - bx as f64) * sx;
            let d2 = dz * dz + dy * dy + dx * dx;
            if d2 < best {
                best = d2;
            }
        }
        total += best.sqrt();
    }
    total / from.len() as f64
}

/// Diagonal of the mask's voxel-center bounding box in millimetres. Serves
/// as the finite fallback when exactly one mask is empty, keeping cohort
/// means usable for failed predictions.
fn bounding_box_diagonal(mask: &[bool], dims: Dims, spacing: Spacing) -> f64 {
    let (d, h, w) = dims;
    let idx = |z: usize, y: usize, x: usize| (z * h + y) * w + x;
    let mut min = (usize::MAX, usize::MAX, usize::MAX);
    let mut max = (0usize, 0usize, 0usize);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if mask[idx(z, y, x)] {
                    min = (min.0.min(z), min.1.min(y), min.2.min(x));
                    max = (max.0.max(z), max.1.max(y), max.2.max(x));
                }
            }
        }
    }
    let dz = (max.0 - min.0) as f64 * spacing.0 as f64;
    let dy = (max.1 - min.1) as f64 * spacing.1 as f64;
    let dx = (max.2 - min.2) as f64 * spacing.2 as f64;
    (dz * dz + dy * dy + dx * dx).sqrt()
}

/// Average symmetric surface distance of one class in millimetres: the mean
/// of the two directed mean surface distances.
///
/// Both masks empty yields 0.0; exactly one empty yields the non-empty
/// mask's bounding-box diagonal.
pub fn assd(pred: &LabelMap, gt: &LabelMap, class_index: usize, spacing: Spacing) -> Result<f64> {
    ensure_same_dims("assd", pred.dims(), gt.dims())?;
    check_class("assd", pred, class_index)?;
    check_class("assd", gt, class_index)?;
    if spacing.0 <= 0.0 || spacing.1 <= 0.0 || spacing.2 <= 0.0 {
        return Err(Error::invalid(format!("assd: spacing must be positive, got {spacing:?}")));
    }
    let dims = pred.dims();
    let pred_mask = class_mask(pred, class_index);
    let gt_mask = class_mask(gt, class_index);
    let pred_empty = !pred_mask.iter().any(|&m| m);
    let gt_empty = !gt_mask.iter().any(|&m| m);
    match (pred_empty, gt_empty) {
        (true, true) => return Ok(0.0),
        (true, false) => return Ok(bounding_box_diagonal(&gt_mask, dims, spacing)),
        (false, true) => return Ok(bounding_box_diagonal(&pred_mask, dims, spacing)),
        (false, false) => {}
    }
    let pred_surface = surface_voxels(&pred_mask, dims);
    let gt_surface = surface_voxels(&gt_mask, dims);
    let a = mean_min_distance(&pred_surface, &gt_surface, spacing);
    let b = mean_min_distance(&gt_surface, &pred_surface, spacing);
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cube_mask(dims: Dims, lo: (usize, usize, usize), side: usize) -> LabelMap {
        let mut labels = vec![0u8; dims.0 * dims.1 * dims.2];
        for z in lo.0..lo.0 + side {
            for y in lo.1..lo.1 + side {
                for x in lo.2..lo.2 + side {
                    labels[(z * dims.1 + y) * dims.2 + x] = 1;
                }
            }
        }
        LabelMap::new(dims, 2, labels).unwrap()
    }

    #[test]
    fn dice_identity_is_one() {
        let m = cube_mask((6, 6, 6), (1, 1, 1), 3);
        assert_eq!(dice_score(&m, &m, 1).unwrap(), 1.0);
    }

    #[test]
    fn dice_disjoint_is_zero() {
        let dims = (8, 8, 8);
        let a = cube_mask(dims, (0, 0, 0), 2);
        let b = cube_mask(dims, (5, 5, 5), 2);
        assert_eq!(dice_score(&a, &b, 1).unwrap(), 0.0);
    }

    #[test]
    fn dice_shifted_cube_is_half() {
        // 4x4x4 cube vs the same cube shifted 2 voxels along x: overlap 32,
        // each mask 64 voxels -> 2*32 / 128 = 0.5.
        let dims = (8, 8, 8);
        let a = cube_mask(dims, (2, 2, 0), 4);
        let b = cube_mask(dims, (2, 2, 2), 4);
        assert_eq!(dice_score(&a, &b, 1).unwrap(), 0.5);
    }

    #[test]
    fn dice_empty_vs_empty_is_one() {
        let dims = (4, 4, 4);
        let empty = LabelMap::zeros(dims, 2).unwrap();
        assert_eq!(dice_score(&empty, &empty, 1).unwrap(), 1.0);
    }

    #[test]
    fn dice_rejects_dim_mismatch() {
        let a = LabelMap::zeros((4, 4, 4), 2).unwrap();
        let b = LabelMap::zeros((4, 4, 5), 2).unwrap();
        assert!(matches!(dice_score(&a, &b, 1), Err(Error::Shape { .. })));
    }

    #[test]
    fn assd_identity_is_zero() {
        let m = cube_mask((6, 6, 6), (1, 2, 1), 3);
        assert_eq!(assd(&m, &m, 1, (1.0, 1.0, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn assd_single_voxels_three_apart() {
        let dims = (8, 8, 8);
        let a = cube_mask(dims, (2, 2, 2), 1);
        let b = cube_mask(dims, (2, 2, 5), 1);
        let d = assd(&a, &b, 1, (1.0, 1.0, 1.0)).unwrap();
        assert!((d - 3.0).abs() < 1e-12);
    }

    #[test]
    fn assd_empty_pred_falls_back_to_bbox_diagonal() {
        let dims = (8, 8, 8);
        let pred = LabelMap::zeros(dims, 2).unwrap();
        let gt = cube_mask(dims, (1, 1, 1), 4);
        let d = assd(&pred, &gt, 1, (1.0, 1.0, 1.0)).unwrap();
        assert!((d - (27.0f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn assd_both_empty_is_zero() {
        let empty = LabelMap::zeros((4, 4, 4), 2).unwrap();
        assert_eq!(assd(&empty, &empty, 1, (1.0, 1.0, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn assd_respects_anisotropic_spacing() {
        let dims = (8, 4, 4);
        let a = cube_mask(dims, (1, 1, 1), 1);
        let b = cube_mask(dims, (4, 1, 1), 1);
        let d = assd(&a, &b, 1, (2.0, 1.0, 1.0)).unwrap();
        assert!((d - 6.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn dice_is_symmetric(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dims = (4, 4, 4);
            let a: Vec<u8> = (0..64).map(|_| rng.random_range(0..2u8)).collect();
            let b: Vec<u8> = (0..64).map(|_| rng.random_range(0..2u8)).collect();
            let a = LabelMap::new(dims, 2, a).unwrap();
            let b = LabelMap::new(dims, 2, b).unwrap();
            prop_assert_eq!(dice_score(&a, &b, 1).unwrap(), dice_score(&b, &a, 1).unwrap());
        }

        #[test]
        fn assd_is_symmetric(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dims = (4, 4, 4);
            let a: Vec<u8> = (0..64).map(|_| rng.random_range(0..2u8)).collect();
            let b: Vec<u8> = (0..64).map(|_| rng.random_range(0..2u8)).collect();
            let a = LabelMap::new(dims, 2, a).unwrap();
            let b = LabelMap::new(dims, 2, b).unwrap();
            let fwd = assd(&a, &b, 1, (1.5, 1.0, 0.5)).unwrap();
            let rev = assd(&b, &a, 1, (1.5, 1.0, 0.5)).unwrap();
            prop_assert_eq!(fwd, rev);
        }

        #[test]
        fn dice_invariant_under_shared_permutation(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            use rand::seq::SliceRandom;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dims = (3, 3, 3);
            let a: Vec<u8> = (0..27).map(|_| rng.random_range(0..2u8)).collect();
            let b: Vec<u8> = (0..27).map(|_| rng.random_range(0..2u8)).collect();
            let mut order: Vec<usize> = (0..27).collect();
            order.shuffle(&mut rng);
            let pa: Vec<u8> = order.iter().map(|&i| a[i]).collect();
            let pb: Vec<u8> = order.iter().map(|&i| b[i]).collect();
            let d0 = dice_score(
                &LabelMap::new(dims, 2, a).unwrap(),
                &LabelMap::new(dims, 2, b).unwrap(),
                1,
            ).unwrap();
            let d1 = dice_score(
                &LabelMap::new(dims, 2, pa).unwrap(),
                &LabelMap::new(dims, 2, pb).unwrap(),
                1,
            ).unwrap();
            prop_assert_eq!(d0, d1);
        }
    }
}
