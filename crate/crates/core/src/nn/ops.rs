//! Pointwise and structural ops with explicit backward passes.

use rand::Rng;

use crate::scalar::{real, Real};

use super::tensor::Tensor;

// ---------------------------------------------------------------- relu

pub fn relu<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<bool>) {
    let mask: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
    let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
    (y, mask)
}

pub fn relu_backward<T: Real>(mask: &[bool], dy: &Tensor<T>) -> Tensor<T> {
    let data = dy
        .data()
        .iter()
        .zip(mask)
        .map(|(&d, &m)| if m { d } else { T::zero() })
        .collect();
    Tensor::new(dy.shape().to_vec(), data)
}

pub fn leaky_relu<T: Real>(x: &Tensor<T>, slope: f64) -> (Tensor<T>, Vec<bool>) {
    let s: T = real(slope);
    let mask: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
    let y = x.map(|v| if v > T::zero() { v } else { v * s });
    (y, mask)
}

pub fn leaky_relu_backward<T: Real>(mask: &[bool], slope: f64, dy: &Tensor<T>) -> Tensor<T> {
    let s: T = real(slope);
    let data = dy
        .data()
        .iter()
        .zip(mask)
        .map(|(&d, &m)| if m { d } else { d * s })
        .collect();
    Tensor::new(dy.shape().to_vec(), data)
}

// ---------------------------------------------------------------- sigmoid

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

// ---------------------------------------------------------------- softmax

/// Softmax over the channel axis (dim 1) of an (N, C, spatial...) tensor.
pub fn softmax_channels<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let n = x.dim(0);
    let c = x.dim(1);
    let spatial: usize = x.shape()[2..].iter().product();
    let mut out = Tensor::zeros(x.shape().to_vec());
    let xv = x.data();
    let ov = out.data_mut();
    for ni in 0..n {
        let base = ni * c * spatial;
        for o in 0..spatial {
            let mut max = xv[base + o];
            for ci in 1..c {
                max = max.max(xv[base + ci * spatial + o]);
            }
            let mut sum = T::zero();
            for ci in 0..c {
                let e = (xv[base + ci * spatial + o] - max).exp();
                ov[base + ci * spatial + o] = e;
                sum += e;
            }
            for ci in 0..c {
                ov[base + ci * spatial + o] /= sum;
            }
        }
    }
    out
}

/// Given softmax output `p` and `dL/dp`, returns `dL/dz` for the softmax
/// input: `p .* (g - sum_c g_c p_c)`.
pub fn softmax_backward<T: Real>(p: &Tensor<T>, dldp: &Tensor<T>) -> Tensor<T> {
    let n = p.dim(0);
    let c = p.dim(1);
    let spatial: usize = p.shape()[2..].iter().product();
    let mut out = Tensor::zeros(p.shape().to_vec());
    let pv = p.data();
    let gv = dldp.data();
    let ov = out.data_mut();
    for ni in 0..n {
        let base = ni * c * spatial;
        for o in 0..spatial {
            let mut dot = T::zero();
            for ci in 0..c {
                let idx = base + ci * spatial + o;
                dot += gv[idx] * pv[idx];
            }
            for ci in 0..c {
                let idx = base + ci * spatial + o;
                ov[idx] = pv[idx] * (gv[idx] - dot);
            }
        }
    }
    out
}

// ---------------------------------------------------------------- dropout

/// Inverted dropout: kept units scale by 1/(1-rate) so expectations match
/// the deterministic pass. Returns the multiplicative mask for backward.
pub fn dropout<T: Real, R: Rng>(x: &Tensor<T>, rate: f64, rng: &mut R) -> (Tensor<T>, Vec<T>) {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
    if rate == 0.0 {
        return (x.clone(), vec![T::one(); x.len()]);
    }
    let scale: T = real(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.random_bool(rate) { T::zero() } else { scale })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    (Tensor::new(x.shape().to_vec(), data), mask)
}

pub fn dropout_backward<T: Real>(mask: &[T], dy: &Tensor<T>) -> Tensor<T> {
    let data = dy.data().iter().zip(mask).map(|(&d, &m)| d * m).collect();
    Tensor::new(dy.shape().to_vec(), data)
}

// ---------------------------------------------------------------- resize

/// Nearest-neighbor 2x upsampling of (N, C, H, W).
pub fn upsample2x_2d<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let mut out = Tensor::zeros(vec![n, c, 2 * h, 2 * w]);
    let xv = x.data();
    let ov = out.data_mut();
    for nc in 0..n * c {
        let sbase = nc * h * w;
        let dbase = nc * 4 * h * w;
        for y in 0..2 * h {
            let sy = y / 2;
            for xx in 0..2 * w {
                ov[dbase + y * 2 * w + xx] = xv[sbase + sy * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2x_2d_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (n, c, h2, w2) = (dy.dim(0), dy.dim(1), dy.dim(2), dy.dim(3));
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(vec![n, c, h, w]);
    let dv = dy.data();
    let ov = dx.data_mut();
    for nc in 0..n * c {
        let sbase = nc * h2 * w2;
        let dbase = nc * h * w;
        for y in 0..h2 {
            for xx in 0..w2 {
                ov[dbase + (y / 2) * w + xx / 2] += dv[sbase + y * w2 + xx];
            }
        }
    }
    dx
}

/// Nearest-neighbor 2x upsampling of (N, C, D, H, W).
pub fn upsample2x_3d<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, d, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3), x.dim(4));
    let mut out = Tensor::zeros(vec![n, c, 2 * d, 2 * h, 2 * w]);
    let xv = x.data();
    let ov = out.data_mut();
    for nc in 0..n * c {
        let sbase = nc * d * h * w;
        let dbase = nc * 8 * d * h * w;
        for z in 0..2 * d {
            let sz = z / 2;
            for y in 0..2 * h {
                let sy = y / 2;
                let srow = sbase + (sz * h + sy) * w;
                let drow = dbase + (z * 2 * h + y) * 2 * w;
                for xx in 0..2 * w {
                    ov[drow + xx] = xv[srow + xx / 2];
                }
            }
        }
    }
    out
}

pub fn upsample2x_3d_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (n, c, d2, h2, w2) = (dy.dim(0), dy.dim(1), dy.dim(2), dy.dim(3), dy.dim(4));
    let (d, h, w) = (d2 / 2, h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(vec![n, c, d, h, w]);
    let dv = dy.data();
    let ov = dx.data_mut();
    for nc in 0..n * c {
        let sbase = nc * d2 * h2 * w2;
        let dbase = nc * d * h * w;
        for z in 0..d2 {
            for y in 0..h2 {
                let srow = sbase + (z * h2 + y) * w2;
                let drow = dbase + ((z / 2) * h + y / 2) * w;
                for xx in 0..w2 {
                    ov[drow + xx / 2] += dv[srow + xx];
                }
            }
        }
    }
    dx
}

// ---------------------------------------------------------------- pooling

/// 2x max pooling over (D, H, W); all three extents must be even.
pub fn maxpool2x_3d<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (n, c, d, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3), x.dim(4));
    assert!(d % 2 == 0 && h % 2 == 0 && w % 2 == 0, "maxpool needs even dims");
    let (od, oh, ow) = (d / 2, h / 2, w / 2);
    let mut out = Tensor::zeros(vec![n, c, od, oh, ow]);
    let mut argmax = vec![0u32; out.len()];
    let xv = x.data();
    let ov = out.data_mut();
    for nc in 0..n * c {
        let sbase = nc * d * h * w;
        let dbase = nc * od * oh * ow;
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_idx = 0usize;
                    for dz in 0..2 {
                        for dy_ in 0..2 {
                            for dx_ in 0..2 {
                                let idx = sbase + ((2 * z + dz) * h + 2 * y + dy_) * w + 2 * xx + dx_;
                                if xv[idx] > best {
                                    best = xv[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    let oidx = dbase + (z * oh + y) * ow + xx;
                    ov[oidx] = best;
                    argmax[oidx] = best_idx as u32;
                }
            }
        }
    }
    (out, argmax)
}

pub fn maxpool2x_3d_backward<T: Real>(argmax: &[u32], dy: &Tensor<T>, input_shape: &[usize]) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let dv = dx.data_mut();
    for (i, &d) in dy.data().iter().enumerate() {
        dv[argmax[i] as usize] += d;
    }
    dx
}

// ---------------------------------------------------------------- concat

/// Concatenates along the channel axis (dim 1).
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let n = a.dim(0);
    assert_eq!(n, b.dim(0));
    let spatial_a: usize = a.shape()[2..].iter().product();
    let spatial_b: usize = b.shape()[2..].iter().product();
    assert_eq!(spatial_a, spatial_b, "concat spatial mismatch");
    let (ca, cb) = (a.dim(1), b.dim(1));
    let mut shape = a.shape().to_vec();
    shape[1] = ca + cb;
    let mut out = Tensor::zeros(shape);
    let ov = out.data_mut();
    for ni in 0..n {
        let abase = ni * ca * spatial_a;
        let bbase = ni * cb * spatial_a;
        let obase = ni * (ca + cb) * spatial_a;
        ov[obase..obase + ca * spatial_a].copy_from_slice(&a.data()[abase..abase + ca * spatial_a]);
        ov[obase + ca * spatial_a..obase + (ca + cb) * spatial_a]
            .copy_from_slice(&b.data()[bbase..bbase + cb * spatial_a]);
    }
    out
}

/// Splits a gradient of a channel concat back into the two parts.
pub fn concat_channels_backward<T: Real>(dy: &Tensor<T>, ca: usize, cb: usize) -> (Tensor<T>, Tensor<T>) {
    let n = dy.dim(0);
    let spatial: usize = dy.shape()[2..].iter().product();
    let mut sa = dy.shape().to_vec();
    sa[1] = ca;
    let mut sb = dy.shape().to_vec();
    sb[1] = cb;
    let mut da = Tensor::zeros(sa);
    let mut db = Tensor::zeros(sb);
    for ni in 0..n {
        let obase = ni * (ca + cb) * spatial;
        let abase = ni * ca * spatial;
        let bbase = ni * cb * spatial;
        da.data_mut()[abase..abase + ca * spatial]
            .copy_from_slice(&dy.data()[obase..obase + ca * spatial]);
        db.data_mut()[bbase..bbase + cb * spatial]
            .copy_from_slice(&dy.data()[obase + ca * spatial..obase + (ca + cb) * spatial]);
    }
    (da, db)
}
