//! Weight initialization.

use rand::Rng;

use crate::scalar::{real, Real};

/// N(0, std) via Box-Muller.
pub fn normal<T: Real, R: Rng>(rng: &mut R, std: f64) -> T {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    real(z * std)
}

/// He-normal initialization for conv weights feeding ReLU.
pub fn he_weights<T: Real, R: Rng>(rng: &mut R, len: usize, fan_in: usize) -> Vec<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    (0..len).map(|_| normal(rng, std)).collect()
}

/// Fixed-scale normal init (the usual image-to-image GAN choice).
pub fn gan_weights<T: Real, R: Rng>(rng: &mut R, len: usize) -> Vec<T> {
    (0..len).map(|_| normal(rng, 0.02)).collect()
}
