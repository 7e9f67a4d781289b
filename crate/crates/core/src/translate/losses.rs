//! GAN objectives and the cycle-consistency loss.
//!
//! The losses are written against the [`SliceTranslator`] / [`SliceScorer`]
//! traits so their contracts can be exercised with exact analytic maps
//! (identity, constant shift) that a trained network only approximates.

use crate::nn::tensor::Tensor;
use crate::scalar::{real, Real};

use super::nets::{SliceScorer, SliceTranslator};

/// Discriminator probabilities are clamped here before any log.
pub const D_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanVariant {
    /// Log-likelihood objective with the non-saturating generator term.
    Log,
    /// Least-squares objective on raw scores.
    Lsgan,
}

pub(crate) fn sigmoid_clamped<T: Real>(z: T) -> T {
    let p = T::one() / (T::one() + (-z).exp());
    let lo: T = real(D_CLAMP);
    let hi: T = real(1.0 - D_CLAMP);
    p.max(lo).min(hi)
}

fn mean<T: Real>(iter: impl Iterator<Item = T>) -> T {
    let mut sum = T::zero();
    let mut n = 0usize;
    for v in iter {
        sum += v;
        n += 1;
    }
    sum / real::<T>(n as f64)
}

/// The log-likelihood adversarial objective
/// `E[log D(real)] + E[log(1 - D(fake))]` — the quantity the discriminator
/// maximizes (training minimizes its negation). Expectations are means over
/// batch entries and score-map positions.
pub fn adversarial_loss<T: Real>(
    disc: &impl SliceScorer<T>,
    real_slices: &Tensor<T>,
    fake_slices: &Tensor<T>,
) -> T {
    assert!(!real_slices.is_empty() && !fake_slices.is_empty(), "batches must be non-empty");
    let real_scores = disc.score_batch(real_slices);
    let fake_scores = disc.score_batch(fake_slices);
    let real_term = mean(real_scores.data().iter().map(|&z| sigmoid_clamped(z).ln()));
    let fake_term = mean(fake_scores.data().iter().map(|&z| (T::one() - sigmoid_clamped(z)).ln()));
    real_term + fake_term
}

/// Non-saturating generator objective `-E[log D(fake)]`.
pub fn generator_adversarial_loss<T: Real>(disc: &impl SliceScorer<T>, fake_slices: &Tensor<T>) -> T {
    assert!(!fake_slices.is_empty(), "batch must be non-empty");
    let scores = disc.score_batch(fake_slices);
    -mean(scores.data().iter().map(|&z| sigmoid_clamped(z).ln()))
}

/// `mean |T_s(T_t(x_s)) - x_s| + mean |T_t(T_s(x_t)) - x_t|`.
pub fn cycle_loss<T: Real>(
    t_s: &impl SliceTranslator<T>,
    t_t: &impl SliceTranslator<T>,
    source_batch: &Tensor<T>,
    target_batch: &Tensor<T>,
) -> T {
    assert!(!source_batch.is_empty() && !target_batch.is_empty(), "batches must be non-empty");
    let rec_s = t_s.translate_batch(&t_t.translate_batch(source_batch));
    let rec_t = t_t.translate_batch(&t_s.translate_batch(target_batch));
    mean_abs_diff(&rec_s, source_batch) + mean_abs_diff(&rec_t, target_batch)
}

pub(crate) fn mean_abs_diff<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> T {
    debug_assert_eq!(a.shape(), b.shape());
    mean(a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs()))
}

// Gradients of the per-variant score losses, each normalized by its own
// element count so they match the mean-based loss values.

pub(crate) fn d_real_score_grad<T: Real>(scores: &Tensor<T>, variant: GanVariant) -> Tensor<T> {
    let n: T = real(scores.len() as f64);
    match variant {
        GanVariant::Log => scores.map(|z| -(T::one() - sigmoid_clamped(z)) / n),
        GanVariant::Lsgan => scores.map(|z| real::<T>(2.0) * (z - T::one()) / n),
    }
}

pub(crate) fn d_fake_score_grad<T: Real>(scores: &Tensor<T>, variant: GanVariant) -> Tensor<T> {
    let n: T = real(scores.len() as f64);
    match variant {
        GanVariant::Log => scores.map(|z| sigmoid_clamped(z) / n),
        GanVariant::Lsgan => scores.map(|z| real::<T>(2.0) * z / n),
    }
}

pub(crate) fn g_fake_score_grad<T: Real>(scores: &Tensor<T>, variant: GanVariant) -> Tensor<T> {
    let n: T = real(scores.len() as f64);
    match variant {
        GanVariant::Log => scores.map(|z| -(T::one() - sigmoid_clamped(z)) / n),
        GanVariant::Lsgan => scores.map(|z| real::<T>(2.0) * (z - T::one()) / n),
    }
}

/// Loss values the gradients above descend, for logging and NaN checks.
pub(crate) fn d_loss_value<T: Real>(real_scores: &Tensor<T>, fake_scores: &Tensor<T>, variant: GanVariant) -> T {
    match variant {
        GanVariant::Log => {
            -(mean(real_scores.data().iter().map(|&z| sigmoid_clamped(z).ln()))
                + mean(fake_scores.data().iter().map(|&z| (T::one() - sigmoid_clamped(z)).ln())))
        }
        GanVariant::Lsgan => {
            mean(real_scores.data().iter().map(|&z| (z - T::one()) * (z - T::one())))
                + mean(fake_scores.data().iter().map(|&z| z * z))
        }
    }
}

pub(crate) fn g_adv_value<T: Real>(fake_scores: &Tensor<T>, variant: GanVariant) -> T {
    match variant {
        GanVariant::Log => -mean(fake_scores.data().iter().map(|&z| sigmoid_clamped(z).ln())),
        GanVariant::Lsgan => mean(fake_scores.data().iter().map(|&z| (z - T::one()) * (z - T::one()))),
    }
}
