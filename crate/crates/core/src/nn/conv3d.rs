//! Direct 3D convolution, stride 1, zero "same" padding. Kernels may be
//! flat along z (1x3x3) for the shallow 2.5D levels.

use rayon::prelude::*;

use crate::scalar::Real;

use super::init;
use super::param::Param;
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Conv3d<T: Real> {
    pub w: Param<T>,
    pub b: Option<Param<T>>,
    pub in_ch: usize,
    pub out_ch: usize,
    /// Kernel extents (kz, ky, kx); each must be odd.
    pub k: (usize, usize, usize),
}

#[derive(Debug, Clone)]
pub struct Conv3dCtx<T: Real> {
    padded: Tensor<T>,
    in_dhw: (usize, usize, usize),
}

impl<T: Real> Conv3d<T> {
    pub fn he_init<R: rand::Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: (usize, usize, usize),
        bias: bool,
        rng: &mut R,
    ) -> Self {
        assert!(k.0 % 2 == 1 && k.1 % 2 == 1 && k.2 % 2 == 1, "kernel extents must be odd");
        let len = out_ch * in_ch * k.0 * k.1 * k.2;
        let fan_in = in_ch * k.0 * k.1 * k.2;
        let w = Param::new(
            format!("{name}.w"),
            vec![out_ch, in_ch, k.0, k.1, k.2],
            init::he_weights(rng, len, fan_in),
        );
        let b = bias.then(|| Param::zeros(format!("{name}.b"), vec![out_ch]));
        Self {
            w,
            b,
            in_ch,
            out_ch,
            k,
        }
    }

    fn pad(&self) -> (usize, usize, usize) {
        (self.k.0 / 2, self.k.1 / 2, self.k.2 / 2)
    }

    fn pad_input(&self, x: &Tensor<T>) -> Tensor<T> {
        let (pz, py, px) = self.pad();
        if pz == 0 && py == 0 && px == 0 {
            return x.clone();
        }
        let (n, c, d, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3), x.dim(4));
        let (pd, ph, pw) = (d + 2 * pz, h + 2 * py, w + 2 * px);
        let mut out = Tensor::zeros(vec![n, c, pd, ph, pw]);
        let src = x.data();
        let dst = out.data_mut();
        for nc in 0..n * c {
            let sbase = nc * d * h * w;
            let dbase = nc * pd * ph * pw;
            for z in 0..d {
                for y in 0..h {
                    let s = sbase + (z * h + y) * w;
                    let t = dbase + ((z + pz) * ph + (y + py)) * pw + px;
                    dst[t..t + w].copy_from_slice(&src[s..s + w]);
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward_train(x).0
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, Conv3dCtx<T>) {
        assert_eq!(x.dim(1), self.in_ch, "conv3d {}: input channels", self.w.name);
        let (n, d, h, w) = (x.dim(0), x.dim(2), x.dim(3), x.dim(4));
        let padded = self.pad_input(x);
        let (pd, ph, pw) = (padded.dim(2), padded.dim(3), padded.dim(4));
        let (kz, ky, kx) = self.k;
        let (ic, oc) = (self.in_ch, self.out_ch);
        let mut out = Tensor::zeros(vec![n, oc, d, h, w]);
        let xp = padded.data();
        let wv = &self.w.w;
        out.data_mut()
            .par_chunks_mut(d * h * w)
            .enumerate()
            .for_each(|(idx, vol)| {
                let ni = idx / oc;
                let oci = idx % oc;
                if let Some(b) = &self.b {
                    let bv = b.w[oci];
                    vol.iter_mut().for_each(|v| *v = bv);
                }
                for ici in 0..ic {
                    let xbase = (ni * ic + ici) * pd * ph * pw;
                    let wbase = (oci * ic + ici) * kz * ky * kx;
                    for z in 0..d {
                        for y in 0..h {
                            let orow = (z * h + y) * w;
                            for dz in 0..kz {
                                for dy_ in 0..ky {
                                    let xrow = xbase + ((z + dz) * ph + (y + dy_)) * pw;
                                    let wrow = wbase + (dz * ky + dy_) * kx;
                                    for dx_ in 0..kx {
                                        let wv_k = wv[wrow + dx_];
                                        let xs = &xp[xrow + dx_..xrow + dx_ + w];
                                        let os = &mut vol[orow..orow + w];
                                        for (o, &xv) in os.iter_mut().zip(xs) {
                                            *o += wv_k * xv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
        (
            out,
            Conv3dCtx {
                padded,
                in_dhw: (d, h, w),
            },
        )
    }

    pub fn backward(&mut self, ctx: &Conv3dCtx<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (n, oc) = (dy.dim(0), dy.dim(1));
        assert_eq!(oc, self.out_ch);
        let (d, h, w) = ctx.in_dhw;
        let (pd, ph, pw) = (ctx.padded.dim(2), ctx.padded.dim(3), ctx.padded.dim(4));
        let (kz, ky, kx) = self.k;
        let (pz, py, px) = self.pad();
        let ic = self.in_ch;
        let xp = ctx.padded.data();
        let dyv = dy.data();

        self.w
            .g
            .par_chunks_mut(ic * kz * ky * kx)
            .enumerate()
            .for_each(|(oci, gw)| {
                for ni in 0..n {
                    let dybase = (ni * oc + oci) * d * h * w;
                    for ici in 0..ic {
                        let xbase = (ni * ic + ici) * pd * ph * pw;
                        for z in 0..d {
                            for y in 0..h {
                                let dyrow = dybase + (z * h + y) * w;
                                for dz in 0..kz {
                                    for dy_ in 0..ky {
                                        let xrow = xbase + ((z + dz) * ph + (y + dy_)) * pw;
                                        let grow = (ici * kz + dz) * ky * kx + dy_ * kx;
                                        for dx_ in 0..kx {
                                            let mut acc = T::zero();
                                            let xs = &xp[xrow + dx_..xrow + dx_ + w];
                                            let ds = &dyv[dyrow..dyrow + w];
                                            for (&xv, &dv) in xs.iter().zip(ds) {
                                                acc += xv * dv;
                                            }
                                            gw[grow + dx_] += acc;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
        if let Some(b) = &mut self.b {
            for oci in 0..oc {
                let mut acc = T::zero();
                for ni in 0..n {
                    let base = (ni * oc + oci) * d * h * w;
                    for v in &dyv[base..base + d * h * w] {
                        acc += *v;
                    }
                }
                b.g[oci] += acc;
            }
        }

        let wv = &self.w.w;
        let mut dxp = Tensor::<T>::zeros(vec![n, ic, pd, ph, pw]);
        dxp.data_mut()
            .par_chunks_mut(ic * pd * ph * pw)
            .enumerate()
            .for_each(|(ni, dslab)| {
                for oci in 0..oc {
                    let dybase = (ni * oc + oci) * d * h * w;
                    for ici in 0..ic {
                        let xbase = ici * pd * ph * pw;
                        let wbase = (oci * ic + ici) * kz * ky * kx;
                        for z in 0..d {
                            for y in 0..h {
                                let dyrow = dybase + (z * h + y) * w;
                                for dz in 0..kz {
                                    for dy_ in 0..ky {
                                        let xrow = xbase + ((z + dz) * ph + (y + dy_)) * pw;
                                        let wrow = wbase + (dz * ky + dy_) * kx;
                                        for dx_ in 0..kx {
                                            let wv_k = wv[wrow + dx_];
                                            let ds = &dyv[dyrow..dyrow + w];
                                            let xs = &mut dslab[xrow + dx_..xrow + dx_ + w];
                                            for (xv, &dv) in xs.iter_mut().zip(ds) {
                                                *xv += wv_k * dv;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });

        if pz == 0 && py == 0 && px == 0 {
            return dxp;
        }
        let mut dx = Tensor::zeros(vec![n, ic, d, h, w]);
        let dxv = dx.data_mut();
        let dpv = dxp.data();
        for nc in 0..n * ic {
            let dbase = nc * d * h * w;
            let pbase = nc * pd * ph * pw;
            for z in 0..d {
                for y in 0..h {
                    let s = pbase + ((z + pz) * ph + (y + py)) * pw + px;
                    let t = dbase + (z * h + y) * w;
                    dxv[t..t + w].copy_from_slice(&dpv[s..s + w]);
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        std::iter::once(&mut self.w).chain(self.b.as_mut())
    }

    pub fn params(&self) -> impl Iterator<Item = &Param<T>> {
        std::iter::once(&self.w).chain(self.b.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradients_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut conv = Conv3d::<f64>::he_init("c", 2, 2, (3, 3, 3), true, &mut rng);
        let shape = vec![1, 2, 4, 4, 4];
        let len = shape.iter().product();
        let x = Tensor::new(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect());
        let (y, ctx) = conv.forward_train(&x);
        let coeff: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dy = Tensor::new(y.shape().to_vec(), coeff.clone());
        let dx = conv.backward(&ctx, &dy);
        let objective = |conv: &Conv3d<f64>, x: &Tensor<f64>| -> f64 {
            conv.forward(x).data().iter().zip(&coeff).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        for idx in (0..x.len()).step_by(11) {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (objective(&conv, &xp) - objective(&conv, &xm)) / (2.0 * h);
            assert!(
                (fd - dx.data()[idx]).abs() < 1e-6 * fd.abs().max(1.0),
                "dx[{idx}]: fd {fd} got {}",
                dx.data()[idx]
            );
        }
        for idx in (0..conv.w.w.len()).step_by(13) {
            let orig = conv.w.w[idx];
            conv.w.w[idx] = orig + h;
            let fp = objective(&conv, &x);
            conv.w.w[idx] = orig - h;
            let fm = objective(&conv, &x);
            conv.w.w[idx] = orig;
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (fd - conv.w.g[idx]).abs() < 1e-6 * fd.abs().max(1.0),
                "dw[{idx}]: fd {fd} got {}",
                conv.w.g[idx]
            );
        }
    }

    #[test]
    fn flat_kernel_ignores_z_neighbors() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let conv = Conv3d::<f64>::he_init("c", 1, 1, (1, 3, 3), false, &mut rng);
        // Two inputs differing only in one z slice must agree elsewhere.
        let mut a = Tensor::zeros(vec![1, 1, 3, 4, 4]);
        let mut b = Tensor::zeros(vec![1, 1, 3, 4, 4]);
        for i in 0..16 {
            a.data_mut()[16 + i] = 1.0; // middle slice
            b.data_mut()[16 + i] = -2.0;
        }
        let ya = conv.forward(&a);
        let yb = conv.forward(&b);
        for i in 0..16 {
            assert_eq!(ya.data()[i], yb.data()[i], "slice 0 must not see slice 1");
            assert_eq!(ya.data()[32 + i], yb.data()[32 + i]);
        }
    }
}
