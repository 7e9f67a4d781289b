//! Volume preprocessing: ROI cropping, intensity normalization and slice
//! trimming.

use crate::error::{Error, Result};
use crate::scalar::{real, Real};
use crate::volume::{Dims, Volume3D};

/// Inclusive voxel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub min: (usize, usize, usize),
    pub max: (usize, usize, usize),
}

impl BBox {
    pub fn new(min: (usize, usize, usize), max: (usize, usize, usize)) -> Result<Self> {
        if min.0 > max.0 || min.1 > max.1 || min.2 > max.2 {
            return Err(Error::invalid(format!("empty bbox: min {min:?} > max {max:?}")));
        }
        Ok(Self { min, max })
    }

    /// Tight box around the nonzero voxels of a mask, if any.
    pub fn of_nonzero(labels: &[u8], dims: Dims) -> Option<Self> {
        let (d, h, w) = dims;
        let mut min = (usize::MAX, usize::MAX, usize::MAX);
        let mut max = (0usize, 0usize, 0usize);
        let mut any = false;
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    if labels[(z * h + y) * w + x] != 0 {
                        any = true;
                        min = (min.0.min(z), min.1.min(y), min.2.min(x));
                        max = (max.0.max(z), max.1.max(y), max.2.max(x));
                    }
                }
            }
        }
        any.then_some(Self { min, max })
    }
}

/// A cropped sub-volume together with the offset of its origin in the
/// parent grid, so predictions can be mapped back.
#[derive(Debug, Clone)]
pub struct CroppedVolume<T: Real> {
    pub volume: Volume3D<T>,
    pub offset: (usize, usize, usize),
}

impl<T: Real> CroppedVolume<T> {
    /// Re-embeds the crop at its recorded coordinates in a volume of the
    /// original dims, zero elsewhere.
    pub fn embed(&self, parent_dims: Dims) -> Result<Volume3D<T>> {
        let (cd, ch, cw) = self.volume.dims();
        let (oz, oy, ox) = self.offset;
        if oz + cd > parent_dims.0 || oy + ch > parent_dims.1 || ox + cw > parent_dims.2 {
            return Err(Error::invalid("crop does not fit parent dims at its offset"));
        }
        let mut out = Volume3D::filled(parent_dims, self.volume.spacing(), T::zero())?;
        let (_, ph, pw) = parent_dims;
        for z in 0..cd {
            for y in 0..ch {
                let src = (z * ch + y) * cw;
                let dst = ((z + oz) * ph + (y + oy)) * pw + ox;
                out.data_mut()[dst..dst + cw].copy_from_slice(&self.volume.data()[src..src + cw]);
            }
        }
        Ok(out)
    }
}

/// Crops `bbox` expanded by `margin` voxels per side, clamped to the volume
/// bounds. Spacing is preserved and the crop offset recorded.
pub fn crop_to_roi<T: Real>(v: &Volume3D<T>, bbox: BBox, margin: usize) -> Result<CroppedVolume<T>> {
    let (d, h, w) = v.dims();
    if bbox.max.0 >= d || bbox.max.1 >= h || bbox.max.2 >= w {
        return Err(Error::invalid(format!(
            "bbox {bbox:?} outside volume dims {:?}",
            v.dims()
        )));
    }
    let lo = (
        bbox.min.0.saturating_sub(margin),
        bbox.min.1.saturating_sub(margin),
        bbox.min.2.saturating_sub(margin),
    );
    let hi = (
        (bbox.max.0 + margin).min(d - 1),
        (bbox.max.1 + margin).min(h - 1),
        (bbox.max.2 + margin).min(w - 1),
    );
    let dims = (hi.0 - lo.0 + 1, hi.1 - lo.1 + 1, hi.2 - lo.2 + 1);
    let mut data = Vec::with_capacity(dims.0 * dims.1 * dims.2);
    for z in lo.0..=hi.0 {
        for y in lo.1..=hi.1 {
            let base = (z * h + y) * w;
            data.extend_from_slice(&v.data()[base + lo.2..base + hi.2 + 1]);
        }
    }
    Ok(CroppedVolume {
        volume: Volume3D::new(dims, v.spacing(), data)?,
        offset: lo,
    })
}

/// Normalizes intensities to zero mean and unit standard deviation over the
/// whole volume. Constant volumes map to all zeros.
pub fn znorm<T: Real>(v: &Volume3D<T>) -> Volume3D<T> {
    let n = real::<T>(v.len() as f64);
    let mean = v.data().iter().copied().sum::<T>() / n;
    let var = v
        .data()
        .iter()
        .map(|&x| {
            let d = x - mean;
            d * d
        })
        .sum::<T>()
        / n;
    let std = var.sqrt();
    let guard: T = real(1e-8);
    let data = if std < guard {
        vec![T::zero(); v.len()]
    } else {
        v.data().iter().map(|&x| (x - mean) / std).collect()
    };
    Volume3D::new(v.dims(), v.spacing(), data).expect("znorm preserves shape and finiteness")
}

/// Drops `n_front` slices from the start and `n_back` from the end of the
/// z axis.
pub fn trim_slices<T: Real>(v: &Volume3D<T>, n_front: usize, n_back: usize) -> Result<Volume3D<T>> {
    let (d, h, w) = v.dims();
    if d <= n_front + n_back {
        return Err(Error::invalid(format!(
            "trim_slices: depth {d} too small for trim {n_front}+{n_back}"
        )));
    }
    let new_d = d - n_front - n_back;
    let plane = h * w;
    let data = v.data()[n_front * plane..(n_front + new_d) * plane].to_vec();
    Volume3D::new((new_d, h, w), v.spacing(), data)
}

/// Mirror index with edge repeat, defined for any size n >= 1.
#[inline]
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - 1 - j;
    }
    j as usize
}

/// Reflect-pads a volume up to at least `min_dims`, centering the original.
/// Returns the padded volume and the offset of the original data inside it.
pub fn pad_reflect_to<T: Real>(v: &Volume3D<T>, min_dims: Dims) -> (Volume3D<T>, (usize, usize, usize)) {
    let (d, h, w) = v.dims();
    let nd = d.max(min_dims.0);
    let nh = h.max(min_dims.1);
    let nw = w.max(min_dims.2);
    if (nd, nh, nw) == (d, h, w) {
        return (v.clone(), (0, 0, 0));
    }
    let off = ((nd - d) / 2, (nh - h) / 2, (nw - w) / 2);
    let mut data = Vec::with_capacity(nd * nh * nw);
    for z in 0..nd {
        let sz = mirror(z as isize - off.0 as isize, d);
        for y in 0..nh {
            let sy = mirror(y as isize - off.1 as isize, h);
            for x in 0..nw {
                let sx = mirror(x as isize - off.2 as isize, w);
                data.push(v.at(sz, sy, sx));
            }
        }
    }
    (
        Volume3D::new((nd, nh, nw), v.spacing(), data).expect("padding preserves finiteness"),
        off,
    )
}
