//! Instance normalization for 2D feature maps: per-sample, per-channel
//! statistics with a learnable affine.

use crate::scalar::{real, Real};

use super::param::Param;
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct InstanceNorm2d<T: Real> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub channels: usize,
    pub eps: T,
}

#[derive(Debug, Clone)]
pub struct InstanceNorm2dCtx<T: Real> {
    normalized: Tensor<T>,
    inv_std: Vec<T>, // one per (n, c) group
}

impl<T: Real> InstanceNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), vec![channels], vec![T::one(); channels]),
            beta: Param::zeros(format!("{name}.beta"), vec![channels]),
            channels,
            eps: real(1e-5),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward_train(x).0
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, InstanceNorm2dCtx<T>) {
        let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        assert_eq!(c, self.channels);
        let m = h * w;
        let inv_m: T = real(1.0 / m as f64);
        let mut normalized = Tensor::zeros(x.shape().to_vec());
        let mut out = Tensor::zeros(x.shape().to_vec());
        let mut inv_stds = Vec::with_capacity(n * c);
        for nc in 0..n * c {
            let ci = nc % c;
            let base = nc * m;
            let xs = &x.data()[base..base + m];
            let mean = xs.iter().copied().sum::<T>() * inv_m;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_m;
            let inv_std = T::one() / (var + self.eps).sqrt();
            inv_stds.push(inv_std);
            let (g, b) = (self.gamma.w[ci], self.beta.w[ci]);
            for (i, &v) in xs.iter().enumerate() {
                let xhat = (v - mean) * inv_std;
                normalized.data_mut()[base + i] = xhat;
                out.data_mut()[base + i] = g * xhat + b;
            }
        }
        (
            out,
            InstanceNorm2dCtx {
                normalized,
                inv_std: inv_stds,
            },
        )
    }

    pub fn backward(&mut self, ctx: &InstanceNorm2dCtx<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (n, c, h, w) = (dy.dim(0), dy.dim(1), dy.dim(2), dy.dim(3));
        let m = h * w;
        let inv_m: T = real(1.0 / m as f64);
        let mut dx = Tensor::zeros(dy.shape().to_vec());
        for nc in 0..n * c {
            let ci = nc % c;
            let base = nc * m;
            let xhat = &ctx.normalized.data()[base..base + m];
            let dys = &dy.data()[base..base + m];
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for (&d, &xh) in dys.iter().zip(xhat) {
                sum_dy += d;
                sum_dy_xhat += d * xh;
            }
            self.beta.g[ci] += sum_dy;
            self.gamma.g[ci] += sum_dy_xhat;
            let scale = self.gamma.w[ci] * ctx.inv_std[nc];
            let mean_dy = sum_dy * inv_m;
            let mean_dy_xhat = sum_dy_xhat * inv_m;
            for i in 0..m {
                dx.data_mut()[base + i] = scale * (dys[i] - mean_dy - xhat[i] * mean_dy_xhat);
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        std::iter::once(&mut self.gamma).chain(std::iter::once(&mut self.beta))
    }

    pub fn params(&self) -> impl Iterator<Item = &Param<T>> {
        std::iter::once(&self.gamma).chain(std::iter::once(&self.beta))
    }
}
