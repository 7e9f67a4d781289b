//! Unpaired adversarial training of the two slice translators, with the
//! auxiliary-checkpoint snapshot taken at epoch ceil(2E/3).

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::adam::Adam;
use crate::nn::tensor::Tensor;
use crate::scalar::Real;

use super::losses::{
    d_fake_score_grad, d_loss_value, d_real_score_grad, g_adv_value, g_fake_score_grad, mean_abs_diff, GanVariant,
};
use super::nets::{DiscriminatorNet, TranslatorNet};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleGanConfig {
    pub epochs: usize,
    pub lambda_cyc: f64,
    pub lr: f64,
    pub batch_slices: usize,
    /// 0 means one full pass over the smaller slice pool per epoch.
    pub steps_per_epoch: usize,
    pub translator_width: usize,
    pub discriminator_width: usize,
    pub variant: GanVariant,
    /// Discriminator learning rate as a fraction of `lr`. Keeping the
    /// discriminators slower stops them from saturating on small slice
    /// pools before the translators move.
    pub d_lr_scale: f64,
    /// Update the discriminators every n-th step.
    pub d_every: usize,
}

impl Default for CycleGanConfig {
    fn default() -> Self {
        Self {
            epochs: 9,
            lambda_cyc: 10.0,
            lr: 2e-4,
            batch_slices: 4,
            steps_per_epoch: 0,
            translator_width: 8,
            discriminator_width: 8,
            variant: GanVariant::Log,
            d_lr_scale: 1.0,
            d_every: 1,
        }
    }
}

/// The trained translators and discriminators plus checkpoint metadata.
#[derive(Debug, Clone)]
pub struct TranslatorSet<T: Real> {
    pub t_s: TranslatorNet<T>,
    pub t_t: TranslatorNet<T>,
    /// Snapshot of `t_t` from an interior epoch; same architecture, earlier
    /// weights, used as the auxiliary target-style translator.
    pub t_at: TranslatorNet<T>,
    pub d_s: DiscriminatorNet<T>,
    pub d_t: DiscriminatorNet<T>,
    pub t_at_epoch: usize,
    pub final_epoch: usize,
}

impl<T: Real> TranslatorSet<T> {
    pub fn validate(&self) -> Result<()> {
        if self.t_at_epoch >= self.final_epoch {
            return Err(Error::invalid(format!(
                "auxiliary checkpoint epoch {} must precede final epoch {}",
                self.t_at_epoch, self.final_epoch
            )));
        }
        if self.t_at.base_width != self.t_t.base_width {
            return Err(Error::invalid("auxiliary translator must share the t_t architecture"));
        }
        Ok(())
    }
}

/// Epoch at which the auxiliary translator snapshot is taken: ceil(2E/3).
pub fn auxiliary_epoch(total_epochs: usize) -> usize {
    (2 * total_epochs).div_ceil(3)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_adv: f64,
    pub cycle: f64,
}

fn batch_from_pool<T: Real>(pool: &[Vec<T>], hw: (usize, usize), idx: &[usize]) -> Tensor<T> {
    let (h, w) = hw;
    let mut data = Vec::with_capacity(idx.len() * h * w);
    for &i in idx {
        data.extend_from_slice(&pool[i]);
    }
    Tensor::new(vec![idx.len(), 1, h, w], data)
}

fn scale_grad<T: Real>(g: &Tensor<T>, factor: T) -> Tensor<T> {
    g.map(|v| v * factor)
}

fn add_grads<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Gradient of `mean |a - b|` with respect to `a`.
fn l1_grad<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let n = crate::scalar::real::<T>(a.len() as f64);
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            if x > y {
                T::one() / n
            } else if x < y {
                -T::one() / n
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Trains T_s/T_t/D_s/D_t on unpaired slice pools. Alternates one generator
/// update and one discriminator update per step, minimizing the two
/// adversarial objectives plus `lambda_cyc` times the cycle loss.
pub fn train_cyclegan<T: Real>(
    source_slices: &[Vec<T>],
    target_slices: &[Vec<T>],
    slice_hw: (usize, usize),
    cfg: &CycleGanConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(TranslatorSet<T>, Vec<EpochLosses>)> {
    if source_slices.is_empty() || target_slices.is_empty() {
        return Err(Error::invalid("train_cyclegan: both slice pools must be non-empty"));
    }
    if cfg.epochs < 3 {
        return Err(Error::invalid(format!(
            "train_cyclegan: need epochs >= 3 for an interior auxiliary checkpoint, got {}",
            cfg.epochs
        )));
    }
    let batch = cfg.batch_slices.max(1);
    let lambda: T = crate::scalar::real(cfg.lambda_cyc);

    let mut t_s = TranslatorNet::<T>::new("T_s", cfg.translator_width, rng);
    let mut t_t = TranslatorNet::<T>::new("T_t", cfg.translator_width, rng);
    let mut d_s = DiscriminatorNet::<T>::new("D_s", cfg.discriminator_width, rng);
    let mut d_t = DiscriminatorNet::<T>::new("D_t", cfg.discriminator_width, rng);
    // Adversarial training wants low first-moment inertia.
    let mut g_opt = Adam::<T>::new(cfg.lr);
    g_opt.beta1 = crate::scalar::real(0.5);
    let mut d_opt = Adam::<T>::new(cfg.lr * cfg.d_lr_scale.max(f64::MIN_POSITIVE));
    d_opt.beta1 = crate::scalar::real(0.5);
    let d_every = cfg.d_every.max(1);

    let steps = if cfg.steps_per_epoch > 0 {
        cfg.steps_per_epoch
    } else {
        source_slices.len().min(target_slices.len()).div_ceil(batch)
    };
    let t_at_epoch = auxiliary_epoch(cfg.epochs);
    let mut t_at: Option<TranslatorNet<T>> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut last_finite = vec![0.0f64; 3];

    for epoch in 1..=cfg.epochs {
        let mut src_order: Vec<usize> = (0..source_slices.len()).collect();
        let mut tgt_order: Vec<usize> = (0..target_slices.len()).collect();
        src_order.shuffle(rng);
        tgt_order.shuffle(rng);
        let mut epoch_d = 0.0f64;
        let mut epoch_g = 0.0f64;
        let mut epoch_cyc = 0.0f64;

        for step in 0..steps {
            let src_idx: Vec<usize> = (0..batch).map(|i| src_order[(step * batch + i) % src_order.len()]).collect();
            let tgt_idx: Vec<usize> = (0..batch).map(|i| tgt_order[(step * batch + i) % tgt_order.len()]).collect();
            let x_s = batch_from_pool(source_slices, slice_hw, &src_idx);
            let x_t = batch_from_pool(target_slices, slice_hw, &tgt_idx);

            // Generator update. The discriminators participate in the
            // chain; their gradient pollution is wiped before the D update.
            let (fake_t, ctx_tt1) = t_t.forward_train(&x_s);
            let (rec_s, ctx_ts1) = t_s.forward_train(&fake_t);
            let (fake_s, ctx_ts2) = t_s.forward_train(&x_t);
            let (rec_t, ctx_tt2) = t_t.forward_train(&fake_s);
            let (score_ft, dctx_t) = d_t.forward_train(&fake_t);
            let (score_fs, dctx_s) = d_s.forward_train(&fake_s);

            let g_adv = g_adv_value(&score_ft, cfg.variant).as_f64() + g_adv_value(&score_fs, cfg.variant).as_f64();
            let cyc = (mean_abs_diff(&rec_s, &x_s) + mean_abs_diff(&rec_t, &x_t)).as_f64();

            let d_fake_t_adv = d_t.backward(&dctx_t, &g_fake_score_grad(&score_ft, cfg.variant));
            let d_fake_t_cyc = t_s.backward(&ctx_ts1, &scale_grad(&l1_grad(&rec_s, &x_s), lambda));
            t_t.backward(&ctx_tt1, &add_grads(&d_fake_t_adv, &d_fake_t_cyc));

            let d_fake_s_adv = d_s.backward(&dctx_s, &g_fake_score_grad(&score_fs, cfg.variant));
            let d_fake_s_cyc = t_t.backward(&ctx_tt2, &scale_grad(&l1_grad(&rec_t, &x_t), lambda));
            t_s.backward(&ctx_ts2, &add_grads(&d_fake_s_adv, &d_fake_s_cyc));

            let mut g_params = t_s.params_mut();
            g_params.extend(t_t.params_mut());
            g_opt.step(g_params.into_iter());
            t_s.zero_grads();
            t_t.zero_grads();
            d_s.zero_grads();
            d_t.zero_grads();

            // Discriminator update on the same fakes, no gradient into G.
            let d_val = if step % d_every == 0 {
                let (score_rt, dctx_rt) = d_t.forward_train(&x_t);
                let (score_ft2, dctx_ft) = d_t.forward_train(&fake_t);
                let (score_rs, dctx_rs) = d_s.forward_train(&x_s);
                let (score_fs2, dctx_fs) = d_s.forward_train(&fake_s);
                let d_val = d_loss_value(&score_rt, &score_ft2, cfg.variant).as_f64()
                    + d_loss_value(&score_rs, &score_fs2, cfg.variant).as_f64();
                d_t.backward(&dctx_rt, &d_real_score_grad(&score_rt, cfg.variant));
                d_t.backward(&dctx_ft, &d_fake_score_grad(&score_ft2, cfg.variant));
                d_s.backward(&dctx_rs, &d_real_score_grad(&score_rs, cfg.variant));
                d_s.backward(&dctx_fs, &d_fake_score_grad(&score_fs2, cfg.variant));
                let mut d_params = d_s.params_mut();
                d_params.extend(d_t.params_mut());
                d_opt.step(d_params.into_iter());
                d_s.zero_grads();
                d_t.zero_grads();
                d_val
            } else {
                last_finite[0] // D held fixed this step; log the last value
            };

            if !d_val.is_finite() || !g_adv.is_finite() || !cyc.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    last_finite: last_finite.clone(),
                });
            }
            last_finite = vec![d_val, g_adv, cyc];
            epoch_d += d_val;
            epoch_g += g_adv;
            epoch_cyc += cyc;
        }

        history.push(EpochLosses {
            epoch,
            d_loss: epoch_d / steps as f64,
            g_adv: epoch_g / steps as f64,
            cycle: epoch_cyc / steps as f64,
        });
        if epoch == t_at_epoch {
            t_at = Some(t_t.clone());
        }
    }

    let set = TranslatorSet {
        t_at: t_at.expect("t_at_epoch <= epochs by construction"),
        t_s,
        t_t,
        d_s,
        d_t,
        t_at_epoch,
        final_epoch: cfg.epochs,
    };
    set.validate()?;
    Ok((set, history))
}

/// Draws every axial slice of a batch of volumes into a flat slice pool.
pub fn slice_pool<T: Real>(volumes: &[crate::volume::Volume3D<T>]) -> Result<(Vec<Vec<T>>, (usize, usize))> {
    let first = volumes.first().ok_or_else(|| Error::invalid("slice_pool: no volumes"))?;
    let (_, h, w) = first.dims();
    let mut pool = Vec::new();
    for v in volumes {
        let (d, vh, vw) = v.dims();
        if (vh, vw) != (h, w) {
            return Err(Error::shape("slice_pool", format!("{h}x{w}"), format!("{vh}x{vw}")));
        }
        for z in 0..d {
            pool.push(v.slice_z(z).to_vec());
        }
    }
    Ok((pool, (h, w)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn auxiliary_epoch_rule() {
        assert_eq!(auxiliary_epoch(3), 2);
        assert_eq!(auxiliary_epoch(300), 200);
        assert_eq!(auxiliary_epoch(9), 6);
        assert_eq!(auxiliary_epoch(4), 3);
    }

    #[test]
    fn too_few_epochs_is_rejected() {
        let cfg = CycleGanConfig {
            epochs: 2,
            ..Default::default()
        };
        let pool = vec![vec![0.0f32; 256]; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(train_cyclegan(&pool, &pool, (16, 16), &cfg, &mut rng).is_err());
    }

    #[test]
    fn smoke_train_reduces_cycle_loss_trend() {
        // Identical distributions; the cycle term should trend down.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pool = Vec::new();
        for i in 0..16 {
            let v: Vec<f32> = (0..256).map(|j| ((i * 7 + j) % 13) as f32 / 13.0 - 0.5).collect();
            pool.push(v);
        }
        let cfg = CycleGanConfig {
            epochs: 6,
            batch_slices: 4,
            steps_per_epoch: 4,
            translator_width: 2,
            discriminator_width: 2,
            ..Default::default()
        };
        let (set, history) = train_cyclegan(&pool, &pool, (16, 16), &cfg, &mut rng).unwrap();
        set.validate().unwrap();
        assert_eq!(set.t_at_epoch, 4);
        assert_eq!(history.len(), 6);
        let first = history.first().unwrap().cycle;
        let last = history.last().unwrap().cycle;
        assert!(
            last < first,
            "cycle loss should trend down: first {first} last {last}"
        );
    }
}

#[cfg(test)]
mod grad_flow_tests {
    use super::*;
    use crate::nn::tensor::Tensor;
    use crate::translate::losses::{g_adv_value, g_fake_score_grad};
    use rand::{Rng, SeedableRng};

    /// End-to-end FD check of the adversarial gradient into translator
    /// parameters: L = g_adv(D(T(x))).
    #[test]
    fn generator_adversarial_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let mut t = TranslatorNet::<f64>::new("T", 2, &mut rng);
        let mut d = DiscriminatorNet::<f64>::new("D", 2, &mut rng);
        let x = Tensor::new(vec![1, 1, 16, 16], (0..256).map(|_| rng.random_range(-1.0..1.0)).collect());

        let (fake, tctx) = t.forward_train(&x);
        let (score, dctx) = d.forward_train(&fake);
        let variant = GanVariant::Lsgan;
        let dfake = d.backward(&dctx, &g_fake_score_grad(&score, variant));
        t.backward(&tctx, &dfake);

        let analytic: Vec<(usize, usize, f64)> = {
            let params = t.params_mut();
            let mut picks = Vec::new();
            for pi in (0..params.len()).step_by(3) {
                let mid = params[pi].w.len() / 2;
                picks.push((pi, mid, params[pi].g[mid]));
            }
            picks
        };
        let objective = |t: &TranslatorNet<f64>, d: &DiscriminatorNet<f64>| -> f64 {
            g_adv_value(&d.forward(&t.forward(&x)), variant).as_f64()
        };
        let h = 1e-5;
        let mut checked = 0;
        for (pi, idx, grad) in analytic {
            let orig = t.params_mut()[pi].w[idx];
            t.params_mut()[pi].w[idx] = orig + h;
            let fp = objective(&t, &d);
            t.params_mut()[pi].w[idx] = orig - h;
            let fm = objective(&t, &d);
            t.params_mut()[pi].w[idx] = orig;
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (fd - grad).abs() < 1e-5 * fd.abs().max(1e-3),
                "param {pi}[{idx}]: fd {fd} analytic {grad}"
            );
            checked += 1;
        }
        assert!(checked > 5);
    }
}
