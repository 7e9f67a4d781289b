//! Dual batch normalization: one set of affine parameters and running
//! statistics per domain, shared nothing else. Routing is an explicit
//! argument on every forward; a batch from one domain can never touch the
//! other domain's statistics.

use crate::error::{Error, Result};
use crate::nn::param::Param;
use crate::nn::tensor::Tensor;
use crate::scalar::{real, Real};
use crate::volume::DomainTag;

/// Default EMA momentum for running statistics.
pub const BN_MOMENTUM: f64 = 0.1;
/// Default numerical stabilizer.
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct DualBn<T: Real> {
    pub name: String,
    pub channels: usize,
    pub gamma_s: Param<T>,
    pub beta_s: Param<T>,
    pub gamma_t: Param<T>,
    pub beta_t: Param<T>,
    pub running_mean_s: Vec<T>,
    pub running_var_s: Vec<T>,
    pub running_mean_t: Vec<T>,
    pub running_var_t: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

#[derive(Debug, Clone)]
pub struct DualBnCtx<T: Real> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
    domain: DomainTag,
}

impl<T: Real> DualBn<T> {
    /// gamma = 1, beta = 0, running mean 0, running variance 1 per domain.
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            channels,
            gamma_s: Param::new(format!("{name}.gamma_s"), vec![channels], vec![T::one(); channels]),
            beta_s: Param::zeros(format!("{name}.beta_s"), vec![channels]),
            gamma_t: Param::new(format!("{name}.gamma_t"), vec![channels], vec![T::one(); channels]),
            beta_t: Param::zeros(format!("{name}.beta_t"), vec![channels]),
            running_mean_s: vec![T::zero(); channels],
            running_var_s: vec![T::one(); channels],
            running_mean_t: vec![T::zero(); channels],
            running_var_t: vec![T::one(); channels],
            momentum: real(BN_MOMENTUM),
            eps: real(BN_EPS),
        }
    }

    fn affine(&self, domain: DomainTag) -> (&Param<T>, &Param<T>) {
        match domain {
            DomainTag::Source => (&self.gamma_s, &self.beta_s),
            DomainTag::Target => (&self.gamma_t, &self.beta_t),
        }
    }

    /// Training forward: normalizes with the current batch statistics and
    /// advances the running statistics of `domain` by one EMA step.
    pub fn forward_train(&mut self, x: &Tensor<T>, domain: DomainTag) -> Result<(Tensor<T>, DualBnCtx<T>)> {
        let n = x.dim(0);
        if n < 2 {
            return Err(Error::invalid(format!(
                "dual-bn {}: train mode needs batch size >= 2, got {n}",
                self.name
            )));
        }
        let c = x.dim(1);
        assert_eq!(c, self.channels, "dual-bn {}: channels", self.name);
        let spatial: usize = x.shape()[2..].iter().product();
        let m = n * spatial;
        let inv_m: T = real(1.0 / m as f64);
        let xv = x.data();

        let mut batch_mean = vec![T::zero(); c];
        let mut batch_var = vec![T::zero(); c];
        for ci in 0..c {
            let mut sum = T::zero();
            for ni in 0..n {
                let base = (ni * c + ci) * spatial;
                for &v in &xv[base..base + spatial] {
                    sum += v;
                }
            }
            let mean = sum * inv_m;
            let mut var = T::zero();
            for ni in 0..n {
                let base = (ni * c + ci) * spatial;
                for &v in &xv[base..base + spatial] {
                    let d = v - mean;
                    var += d * d;
                }
            }
            batch_mean[ci] = mean;
            batch_var[ci] = var * inv_m;
        }

        {
            let alpha = self.momentum;
            let one_minus = T::one() - alpha;
            let (rm, rv) = match domain {
                DomainTag::Source => (&mut self.running_mean_s, &mut self.running_var_s),
                DomainTag::Target => (&mut self.running_mean_t, &mut self.running_var_t),
            };
            for ci in 0..c {
                rm[ci] = one_minus * rm[ci] + alpha * batch_mean[ci];
                rv[ci] = one_minus * rv[ci] + alpha * batch_var[ci];
            }
        }

        let (gamma, beta) = self.affine(domain);
        let mut normalized = Tensor::zeros(x.shape().to_vec());
        let mut out = Tensor::zeros(x.shape().to_vec());
        let mut inv_std = vec![T::zero(); c];
        for ci in 0..c {
            inv_std[ci] = T::one() / (batch_var[ci] + self.eps).sqrt();
        }
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * spatial;
                let (g, b, mu, is) = (gamma.w[ci], beta.w[ci], batch_mean[ci], inv_std[ci]);
                for i in base..base + spatial {
                    let xhat = (xv[i] - mu) * is;
                    normalized.data_mut()[i] = xhat;
                    out.data_mut()[i] = g * xhat + b;
                }
            }
        }
        Ok((
            out,
            DualBnCtx {
                normalized,
                inv_std,
                domain,
            },
        ))
    }

    /// Inference forward: normalizes with the running statistics of
    /// `domain`; never mutates state.
    pub fn forward_eval(&self, x: &Tensor<T>, domain: DomainTag) -> Tensor<T> {
        let n = x.dim(0);
        let c = x.dim(1);
        assert_eq!(c, self.channels, "dual-bn {}: channels", self.name);
        let spatial: usize = x.shape()[2..].iter().product();
        let (rm, rv) = match domain {
            DomainTag::Source => (&self.running_mean_s, &self.running_var_s),
            DomainTag::Target => (&self.running_mean_t, &self.running_var_t),
        };
        let (gamma, beta) = self.affine(domain);
        let mut out = Tensor::zeros(x.shape().to_vec());
        let xv = x.data();
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * spatial;
                let is = T::one() / (rv[ci] + self.eps).sqrt();
                let (g, b, mu) = (gamma.w[ci], beta.w[ci], rm[ci]);
                for i in base..base + spatial {
                    out.data_mut()[i] = g * (xv[i] - mu) * is + b;
                }
            }
        }
        out
    }

    /// Backward through the training forward. Only the ctx domain's affine
    /// parameters accumulate gradients.
    pub fn backward(&mut self, ctx: &DualBnCtx<T>, dy: &Tensor<T>) -> Tensor<T> {
        let n = dy.dim(0);
        let c = dy.dim(1);
        let spatial: usize = dy.shape()[2..].iter().product();
        let m = n * spatial;
        let inv_m: T = real(1.0 / m as f64);
        let (gamma, _) = self.affine(ctx.domain);
        let gamma_w = gamma.w.clone();
        let mut dx = Tensor::zeros(dy.shape().to_vec());
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for ci in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for ni in 0..n {
                let base = (ni * c + ci) * spatial;
                for i in base..base + spatial {
                    sum_dy += dy.data()[i];
                    sum_dy_xhat += dy.data()[i] * ctx.normalized.data()[i];
                }
            }
            dgamma[ci] = sum_dy_xhat;
            dbeta[ci] = sum_dy;
            let scale = gamma_w[ci] * ctx.inv_std[ci];
            let mean_dy = sum_dy * inv_m;
            let mean_dy_xhat = sum_dy_xhat * inv_m;
            for ni in 0..n {
                let base = (ni * c + ci) * spatial;
                for i in base..base + spatial {
                    dx.data_mut()[i] =
                        scale * (dy.data()[i] - mean_dy - ctx.normalized.data()[i] * mean_dy_xhat);
                }
            }
        }
        let (gamma, beta) = match ctx.domain {
            DomainTag::Source => (&mut self.gamma_s, &mut self.beta_s),
            DomainTag::Target => (&mut self.gamma_t, &mut self.beta_t),
        };
        for ci in 0..c {
            gamma.g[ci] += dgamma[ci];
            beta.g[ci] += dbeta[ci];
        }
        dx
    }

    /// Learnable parameters of one domain branch.
    pub fn domain_params_mut(&mut self, domain: DomainTag) -> impl Iterator<Item = &mut Param<T>> {
        let (g, b) = match domain {
            DomainTag::Source => (&mut self.gamma_s, &mut self.beta_s),
            DomainTag::Target => (&mut self.gamma_t, &mut self.beta_t),
        };
        std::iter::once(g).chain(std::iter::once(b))
    }

    pub fn all_params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        [&mut self.gamma_s, &mut self.beta_s, &mut self.gamma_t, &mut self.beta_t].into_iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batch(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.random_range(-3.0..3.0)).collect())
    }

    #[test]
    fn constant_batch_outputs_beta() {
        let mut bn = DualBn::<f64>::new("bn", 2);
        bn.beta_s.w = vec![0.7, -0.2];
        let x = Tensor::new(vec![2, 2, 2], vec![5.0; 8]);
        let (y, _) = bn.forward_train(&x, DomainTag::Source).unwrap();
        for ni in 0..2 {
            for ci in 0..2 {
                for i in 0..2 {
                    let v = y.data()[(ni * 2 + ci) * 2 + i];
                    assert!((v - bn.beta_s.w[ci]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn eval_identity_with_unit_stats() {
        // Identity up to the eps guard: y = x / sqrt(1 + 1e-5).
        let bn = DualBn::<f64>::new("bn", 1);
        let x = batch(vec![1, 1, 8], 3);
        let y = bn.forward_eval(&x, DomainTag::Target);
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn ema_update_and_isolation() {
        let mut bn = DualBn::<f64>::new("bn", 1);
        // batch mean 2, momentum 0.1 -> running mean 0.2; target untouched.
        let x = Tensor::new(vec![2, 1, 2], vec![2.0, 2.0, 2.0, 2.0]);
        bn.forward_train(&x, DomainTag::Source).unwrap();
        assert!((bn.running_mean_s[0] - 0.2).abs() < 1e-12);
        assert_eq!(bn.running_mean_t[0], 0.0);
        assert_eq!(bn.running_var_t[0], 1.0);
        assert_eq!(bn.gamma_t.w[0], 1.0);
    }

    #[test]
    fn closed_form_ema_after_k_steps() {
        let mut bn = DualBn::<f64>::new("bn", 1);
        let x = Tensor::new(vec![2, 1, 2], vec![1.0, 3.0, 1.0, 3.0]); // mean 2, var 1
        for k in 1..=100 {
            bn.forward_train(&x, DomainTag::Target).unwrap();
            let expected = 2.0 * (1.0 - 0.9f64.powi(k));
            assert!(
                (bn.running_mean_t[0] - expected).abs() < 1e-6,
                "k={k}: {} vs {expected}",
                bn.running_mean_t[0]
            );
        }
    }

    #[test]
    fn batch_of_one_is_rejected_in_train() {
        let mut bn = DualBn::<f64>::new("bn", 1);
        let x = Tensor::new(vec![1, 1, 4], vec![0.0; 4]);
        assert!(bn.forward_train(&x, DomainTag::Source).is_err());
    }

    #[test]
    fn backward_matches_fd() {
        let x = batch(vec![2, 2, 3], 7);
        let coeff: Vec<f64> = batch(vec![2, 2, 3], 8).into_data();
        let make = || {
            let mut bn = DualBn::<f64>::new("bn", 2);
            bn.gamma_s.w = vec![1.3, 0.6];
            bn.beta_s.w = vec![0.1, -0.4];
            bn
        };
        let mut bn = make();
        let (y, ctx) = bn.forward_train(&x, DomainTag::Source).unwrap();
        let dy = Tensor::new(y.shape().to_vec(), coeff.clone());
        let dx = bn.backward(&ctx, &dy);
        let objective = |x: &Tensor<f64>| -> f64 {
            let mut bn = make();
            let (y, _) = bn.forward_train(x, DomainTag::Source).unwrap();
            y.data().iter().zip(&coeff).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (objective(&xp) - objective(&xm)) / (2.0 * h);
            assert!((fd - dx.data()[idx]).abs() < 1e-5, "idx {idx}: fd {fd} got {}", dx.data()[idx]);
        }
        // Only the source affine received gradients.
        assert!(bn.gamma_s.g.iter().any(|&g| g != 0.0));
        assert!(bn.gamma_t.g.iter().all(|&g| g == 0.0));
        assert!(bn.beta_t.g.iter().all(|&g| g == 0.0));
    }
}
