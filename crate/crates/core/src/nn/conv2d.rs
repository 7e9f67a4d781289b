//! Direct 2D convolution with zero or reflect padding and strided output.

use rayon::prelude::*;

use crate::scalar::Real;

use super::init;
use super::param::Param;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pad2d {
    Zeros,
    /// Mirror without edge repeat; requires pad < spatial dim.
    Reflect,
}

#[derive(Debug, Clone)]
pub struct Conv2d<T: Real> {
    pub w: Param<T>,
    pub b: Option<Param<T>>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub pad_mode: Pad2d,
}

/// Saved forward state: the padded input.
#[derive(Debug, Clone)]
pub struct Conv2dCtx<T: Real> {
    padded: Tensor<T>,
    in_hw: (usize, usize),
}

impl<T: Real> Conv2d<T> {
    pub fn gan_init<R: rand::Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        pad_mode: Pad2d,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = Param::new(
            format!("{name}.w"),
            vec![out_ch, in_ch, k, k],
            init::gan_weights(rng, out_ch * in_ch * k * k),
        );
        let b = bias.then(|| Param::zeros(format!("{name}.b"), vec![out_ch]));
        Self {
            w,
            b,
            in_ch,
            out_ch,
            k,
            stride,
            pad,
            pad_mode,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn pad_input(&self, x: &Tensor<T>) -> Tensor<T> {
        let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let p = self.pad;
        if p == 0 {
            return x.clone();
        }
        let (ph, pw) = (h + 2 * p, w + 2 * p);
        let mut out = Tensor::zeros(vec![n, c, ph, pw]);
        let src = x.data();
        let dst = out.data_mut();
        for nc in 0..n * c {
            let sbase = nc * h * w;
            let dbase = nc * ph * pw;
            match self.pad_mode {
                Pad2d::Zeros => {
                    for y in 0..h {
                        let s = sbase + y * w;
                        let d = dbase + (y + p) * pw + p;
                        dst[d..d + w].copy_from_slice(&src[s..s + w]);
                    }
                }
                Pad2d::Reflect => {
                    debug_assert!(p < h && p < w, "reflect pad {p} too large for {h}x{w}");
                    for y in 0..ph {
                        let sy = reflect_index(y as isize - p as isize, h);
                        for xx in 0..pw {
                            let sx = reflect_index(xx as isize - p as isize, w);
                            dst[dbase + y * pw + xx] = src[sbase + sy * w + sx];
                        }
                    }
                }
            }
        }
        out
    }

    /// Inference forward; no state is saved.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward_train(x).0
    }

    /// Training forward; returns the output and the saved state backward
    /// needs.
    pub fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, Conv2dCtx<T>) {
        let (n, _c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        assert_eq!(x.dim(1), self.in_ch, "conv2d {}: input channels", self.w.name);
        let padded = self.pad_input(x);
        let (oh, ow) = self.out_hw(h, w);
        let (ph, pw) = (padded.dim(2), padded.dim(3));
        let mut out = Tensor::zeros(vec![n, self.out_ch, oh, ow]);
        let xp = padded.data();
        let wv = &self.w.w;
        let (k, s, ic, oc) = (self.k, self.stride, self.in_ch, self.out_ch);
        out.data_mut()
            .par_chunks_mut(oh * ow)
            .enumerate()
            .for_each(|(idx, plane)| {
                let ni = idx / oc;
                let oci = idx % oc;
                if let Some(b) = &self.b {
                    let bv = b.w[oci];
                    plane.iter_mut().for_each(|v| *v = bv);
                }
                for ici in 0..ic {
                    let xbase = (ni * ic + ici) * ph * pw;
                    let wbase = (oci * ic + ici) * k * k;
                    for oy in 0..oh {
                        let orow = oy * ow;
                        for ky in 0..k {
                            let xrow = xbase + (oy * s + ky) * pw;
                            for kx in 0..k {
                                let wv_k = wv[wbase + ky * k + kx];
                                let xoff = xrow + kx;
                                if s == 1 {
                                    let xs = &xp[xoff..xoff + ow];
                                    let os = &mut plane[orow..orow + ow];
                                    for (o, &xv) in os.iter_mut().zip(xs) {
                                        *o += wv_k * xv;
                                    }
                                } else {
                                    for ox in 0..ow {
                                        plane[orow + ox] += wv_k * xp[xoff + ox * s];
                                    }
                                }
                            }
                        }
                    }
                }
            });
        (
            out,
            Conv2dCtx {
                padded,
                in_hw: (h, w),
            },
        )
    }

    /// Accumulates weight/bias grads and returns the input gradient.
    pub fn backward(&mut self, ctx: &Conv2dCtx<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (n, oc, oh, ow) = (dy.dim(0), dy.dim(1), dy.dim(2), dy.dim(3));
        assert_eq!(oc, self.out_ch);
        let (h, w) = ctx.in_hw;
        let (ph, pw) = (ctx.padded.dim(2), ctx.padded.dim(3));
        let xp = ctx.padded.data();
        let dyv = dy.data();
        let (k, s, ic, p) = (self.k, self.stride, self.in_ch, self.pad);

        // Weight grads, one task per output channel.
        self.w
            .g
            .par_chunks_mut(ic * k * k)
            .enumerate()
            .for_each(|(oci, gw)| {
                for ni in 0..n {
                    let dybase = (ni * oc + oci) * oh * ow;
                    for ici in 0..ic {
                        let xbase = (ni * ic + ici) * ph * pw;
                        for oy in 0..oh {
                            let dyrow = dybase + oy * ow;
                            for ky in 0..k {
                                let xrow = xbase + (oy * s + ky) * pw;
                                for kx in 0..k {
                                    let mut acc = T::zero();
                                    if s == 1 {
                                        let xs = &xp[xrow + kx..xrow + kx + ow];
                                        let ds = &dyv[dyrow..dyrow + ow];
                                        for (&xv, &dv) in xs.iter().zip(ds) {
                                            acc += xv * dv;
                                        }
                                    } else {
                                        for ox in 0..ow {
                                            acc += xp[xrow + kx + ox * s] * dyv[dyrow + ox];
                                        }
                                    }
                                    gw[(ici * k + ky) * k + kx] += acc;
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
                    let base = (ni * oc + oci) * oh * ow;
                    for v in &dyv[base..base + oh * ow] {
                        acc += *v;
                    }
                }
                b.g[oci] += acc;
            }
        }

        // Gradient into the padded input, one task per sample.
        let wv = &self.w.w;
        let mut dxp = Tensor::<T>::zeros(vec![n, ic, ph, pw]);
        dxp.data_mut()
            .par_chunks_mut(ic * ph * pw)
            .enumerate()
            .for_each(|(ni, dslab)| {
                for oci in 0..oc {
                    let dybase = (ni * oc + oci) * oh * ow;
                    for ici in 0..ic {
                        let xbase = ici * ph * pw;
                        let wbase = (oci * ic + ici) * k * k;
                        for oy in 0..oh {
                            let dyrow = dybase + oy * ow;
                            for ky in 0..k {
                                let xrow = xbase + (oy * s + ky) * pw;
                                for kx in 0..k {
                                    let wv_k = wv[wbase + ky * k + kx];
                                    if s == 1 {
                                        let ds = &dyv[dyrow..dyrow + ow];
                                        let xs = &mut dslab[xrow + kx..xrow + kx + ow];
                                        for (xv, &dv) in xs.iter_mut().zip(ds) {
                                            *xv += wv_k * dv;
                                        }
                                    } else {
                                        for ox in 0..ow {
                                            dslab[xrow + kx + ox * s] += wv_k * dyv[dyrow + ox];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });

        // Fold padding back onto the source voxels.
        if p == 0 {
            return dxp;
        }
        let mut dx = Tensor::zeros(vec![n, ic, h, w]);
        let dxv = dx.data_mut();
        let dpv = dxp.data();
        for nc in 0..n * ic {
            let dbase = nc * h * w;
            let pbase = nc * ph * pw;
            match self.pad_mode {
                Pad2d::Zeros => {
                    for y in 0..h {
                        let s0 = pbase + (y + p) * pw + p;
                        let d0 = dbase + y * w;
                        for xx in 0..w {
                            dxv[d0 + xx] += dpv[s0 + xx];
                        }
                    }
                }
                Pad2d::Reflect => {
                    for y in 0..ph {
                        let sy = reflect_index(y as isize - p as isize, h);
                        for xx in 0..pw {
                            let sx = reflect_index(xx as isize - p as isize, w);
                            dxv[dbase + sy * w + sx] += dpv[pbase + y * pw + xx];
                        }
                    }
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

/// PyTorch-style reflection: [-1 -> 1], [n -> n-2].
#[inline]
fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut j = i;
    if j < 0 {
        j = -j;
    }
    if j >= n {
        j = 2 * n - 2 - j;
    }
    debug_assert!((0..n).contains(&j));
    j as usize
}
