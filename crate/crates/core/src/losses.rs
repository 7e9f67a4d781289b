//! Soft Dice losses over probability maps.
//!
//! Both losses average a per-class overlap ratio over the foreground classes
//! (class 0 is background) and are exposed with analytic gradients with
//! respect to the predicted probabilities; training composes these with the
//! softmax Jacobian.

use crate::error::{Error, Result};
use crate::scalar::{real, Real};
use crate::volume::{ensure_same_dims, ProbabilityMap, WeightMap};

/// Stabilizer added per the loss definitions.
pub const DICE_EPS: f64 = 1e-5;

fn check_finite<T: Real>(context: &str, data: &[T]) -> Result<()> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{context}: input contains NaN/Inf")));
    }
    Ok(())
}

/// Soft Dice loss on raw channel-major buffers:
/// `1 - mean_c (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps)` over foreground
/// classes c. Returns the loss and `dL/dpred`.
pub fn soft_dice_with_grad_raw<T: Real>(
    pred: &[T],
    target: &[T],
    n_voxels: usize,
    num_classes: usize,
) -> (T, Vec<T>) {
    debug_assert_eq!(pred.len(), n_voxels * num_classes);
    debug_assert_eq!(target.len(), n_voxels * num_classes);
    let eps: T = real(DICE_EPS);
    let fg = (num_classes - 1) as f64;
    let inv_fg: T = real(1.0 / fg);
    let mut loss = T::one();
    let mut grad = vec![T::zero(); pred.len()];
    for c in 1..num_classes {
        let base = c * n_voxels;
        let p = &pred[base..base + n_voxels];
        let g = &target[base..base + n_voxels];
        let mut inter = T::zero();
        let mut sum = T::zero();
        for (&pv, &gv) in p.iter().zip(g) {
            inter += pv * gv;
            sum += pv + gv;
        }
        let num = real::<T>(2.0) * inter + eps;
        let den = sum + eps;
        loss -= inv_fg * num / den;
        let den2 = den * den;
        for (o, (&_pv, &gv)) in p.iter().zip(g).enumerate() {
            // d(num/den)/dp = (2*g*den - num) / den^2
            grad[base + o] = -inv_fg * (real::<T>(2.0) * gv * den - num) / den2;
        }
    }
    (loss, grad)
}

/// Weighted soft Dice on raw buffers: per foreground class
/// `sum(2*A*p*g) / (sum(A*(p+g)) + eps)`, the same per-voxel weight `A` for
/// every class. Returns the loss and `dL/dpred`.
pub fn weighted_dice_with_grad_raw<T: Real>(
    pred: &[T],
    target: &[T],
    weights: &[T],
    n_voxels: usize,
    num_classes: usize,
) -> (T, Vec<T>) {
    debug_assert_eq!(pred.len(), n_voxels * num_classes);
    debug_assert_eq!(target.len(), n_voxels * num_classes);
    debug_assert_eq!(weights.len(), n_voxels);
    let eps: T = real(DICE_EPS);
    let two: T = real(2.0);
    let inv_fg: T = real(1.0 / (num_classes - 1) as f64);
    let mut loss = T::one();
    let mut grad = vec![T::zero(); pred.len()];
    for c in 1..num_classes {
        let base = c * n_voxels;
        let p = &pred[base..base + n_voxels];
        let g = &target[base..base + n_voxels];
        let mut num = T::zero();
        let mut den = eps;
        for ((&pv, &gv), &av) in p.iter().zip(g).zip(weights) {
            num += two * av * pv * gv;
            den += av * (pv + gv);
        }
        loss -= inv_fg * num / den;
        let den2 = den * den;
        for (o, (&_pv, &gv)) in p.iter().zip(g).enumerate() {
            let av = weights[o];
            grad[base + o] = -inv_fg * (two * av * gv * den - num * av) / den2;
        }
    }
    (loss, grad)
}

/// Soft Dice loss between a prediction and a one-hot target.
pub fn soft_dice_loss<T: Real>(pred: &ProbabilityMap<T>, target: &ProbabilityMap<T>) -> Result<T> {
    ensure_same_dims("soft_dice_loss", pred.dims(), target.dims())?;
    if pred.num_classes() != target.num_classes() {
        return Err(Error::shape(
            "soft_dice_loss",
            format!("{} classes", target.num_classes()),
            format!("{} classes", pred.num_classes()),
        ));
    }
    check_finite("soft_dice_loss", pred.data())?;
    check_finite("soft_dice_loss", target.data())?;
    let (loss, _) = soft_dice_with_grad_raw(pred.data(), target.data(), pred.num_voxels(), pred.num_classes());
    Ok(loss)
}

/// Gradient of [`soft_dice_loss`] with respect to `pred`.
pub fn soft_dice_loss_grad<T: Real>(pred: &ProbabilityMap<T>, target: &ProbabilityMap<T>) -> Result<Vec<T>> {
    ensure_same_dims("soft_dice_loss", pred.dims(), target.dims())?;
    if pred.num_classes() != target.num_classes() {
        return Err(Error::shape(
            "soft_dice_loss",
            format!("{} classes", target.num_classes()),
            format!("{} classes", pred.num_classes()),
        ));
    }
    let (_, grad) = soft_dice_with_grad_raw(pred.data(), target.data(), pred.num_voxels(), pred.num_classes());
    Ok(grad)
}

/// Weighted soft Dice loss between a prediction and a one-hot pseudo label,
/// gated voxelwise by the combined weight map.
pub fn weighted_dice_loss<T: Real>(
    pred: &ProbabilityMap<T>,
    pseudo: &ProbabilityMap<T>,
    weights: &WeightMap<T>,
) -> Result<T> {
    ensure_same_dims("weighted_dice_loss", pred.dims(), pseudo.dims())?;
    ensure_same_dims("weighted_dice_loss", pred.dims(), weights.dims())?;
    if pred.num_classes() != pseudo.num_classes() {
        return Err(Error::shape(
            "weighted_dice_loss",
            format!("{} classes", pseudo.num_classes()),
            format!("{} classes", pred.num_classes()),
        ));
    }
    check_finite("weighted_dice_loss", pred.data())?;
    check_finite("weighted_dice_loss", pseudo.data())?;
    check_finite("weighted_dice_loss", weights.data())?;
    if weights.data().iter().any(|&a| a > T::one()) {
        return Err(Error::invalid("weighted_dice_loss: weights must lie in [0,1]"));
    }
    let (loss, _) = weighted_dice_with_grad_raw(
        pred.data(),
        pseudo.data(),
        weights.data(),
        pred.num_voxels(),
        pred.num_classes(),
    );
    Ok(loss)
}

/// Gradient of [`weighted_dice_loss`] with respect to `pred`.
pub fn weighted_dice_loss_grad<T: Real>(
    pred: &ProbabilityMap<T>,
    pseudo: &ProbabilityMap<T>,
    weights: &WeightMap<T>,
) -> Result<Vec<T>> {
    ensure_same_dims("weighted_dice_loss", pred.dims(), pseudo.dims())?;
    ensure_same_dims("weighted_dice_loss", pred.dims(), weights.dims())?;
    let (_, grad) = weighted_dice_with_grad_raw(
        pred.data(),
        pseudo.data(),
        weights.data(),
        pred.num_voxels(),
        pred.num_classes(),
    );
    Ok(grad)
}
