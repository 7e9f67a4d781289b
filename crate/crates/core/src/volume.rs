//! Core value types: scalar volumes, label maps, probability maps and
//! per-voxel weight maps, all stored flat in z-major (depth-slowest) order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Voxel counts as (depth, height, width).
pub type Dims = (usize, usize, usize);

/// Physical voxel size in millimetres as (sz, sy, sx).
pub type Spacing = (f32, f32, f32);

/// Which of the two modalities a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Source,
    Target,
}

impl DomainTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::Source => "source",
            DomainTag::Target => "target",
        }
    }
}

impl std::fmt::Display for DomainTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub(crate) fn voxel_count(dims: Dims) -> usize {
    dims.0 * dims.1 * dims.2
}

fn check_dims(dims: Dims) -> Result<()> {
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return Err(Error::invalid(format!("volume dims must all be >= 1, got {dims:?}")));
    }
    Ok(())
}

fn check_spacing(spacing: Spacing) -> Result<()> {
    if spacing.0 <= 0.0 || spacing.1 <= 0.0 || spacing.2 <= 0.0 {
        return Err(Error::invalid(format!("spacing must be positive, got {spacing:?}")));
    }
    Ok(())
}

/// A dense 3D scalar field with physical spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D<T: Real> {
    dims: Dims,
    spacing: Spacing,
    data: Vec<T>,
}

impl<T: Real> Volume3D<T> {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<T>) -> Result<Self> {
        check_dims(dims)?;
        check_spacing(spacing)?;
        if data.len() != voxel_count(dims) {
            return Err(Error::shape(
                "Volume3D::new",
                format!("{} voxels for dims {dims:?}", voxel_count(dims)),
                format!("{}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("volume data contains NaN/Inf"));
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: T) -> Result<Self> {
        Self::new(dims, spacing, vec![value; voxel_count(dims)])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims.1 + y) * self.dims.2 + x
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> T {
        self.data[self.index(z, y, x)]
    }

    pub fn cast<U: Real>(&self) -> Volume3D<U> {
        Volume3D {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// One axial (z) slice as a flat row-major (y, x) copy.
    pub fn slice_z(&self, z: usize) -> &[T] {
        let plane = self.dims.1 * self.dims.2;
        &self.data[z * plane..(z + 1) * plane]
    }
}

/// Integer class labels paired with a volume grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    dims: Dims,
    num_classes: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(dims: Dims, num_classes: usize, labels: Vec<u8>) -> Result<Self> {
        check_dims(dims)?;
        if num_classes < 2 {
            return Err(Error::invalid(format!("num_classes must be >= 2, got {num_classes}")));
        }
        if num_classes > 256 {
            return Err(Error::invalid(format!("num_classes must fit u8 labels, got {num_classes}")));
        }
        if labels.len() != voxel_count(dims) {
            return Err(Error::shape(
                "LabelMap::new",
                format!("{} voxels for dims {dims:?}", voxel_count(dims)),
                format!("{}", labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&l| (l as usize) >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self { dims, num_classes, labels })
    }

    pub fn zeros(dims: Dims, num_classes: usize) -> Result<Self> {
        Self::new(dims, num_classes, vec![0u8; voxel_count(dims)])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn into_labels(self) -> Vec<u8> {
        self.labels
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims.1 + y) * self.dims.2 + x
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> u8 {
        self.labels[self.index(z, y, x)]
    }

    /// Count of voxels labeled `class_index`.
    pub fn class_count(&self, class_index: usize) -> usize {
        self.labels.iter().filter(|&&l| l as usize == class_index).count()
    }
}

/// Per-voxel class probabilities, stored channel-major: channel c occupies
/// `[c * n_voxels, (c + 1) * n_voxels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap<T: Real> {
    dims: Dims,
    num_classes: usize,
    data: Vec<T>,
}

impl<T: Real> ProbabilityMap<T> {
    /// Per-voxel channel sums must be within this of 1.
    pub const SUM_TOL: f64 = 1e-5;

    pub fn new(dims: Dims, num_classes: usize, data: Vec<T>) -> Result<Self> {
        let pm = Self::from_raw(dims, num_classes, data)?;
        pm.validate()?;
        Ok(pm)
    }

    /// Builds without the normalization/range check. For intermediate values
    /// (e.g. finite-difference probes) that deliberately break the per-voxel
    /// sum invariant.
    pub fn from_raw(dims: Dims, num_classes: usize, data: Vec<T>) -> Result<Self> {
        check_dims(dims)?;
        if num_classes < 2 {
            return Err(Error::invalid(format!("num_classes must be >= 2, got {num_classes}")));
        }
        if data.len() != voxel_count(dims) * num_classes {
            return Err(Error::shape(
                "ProbabilityMap::new",
                format!("{} values for dims {dims:?} x {num_classes} classes", voxel_count(dims) * num_classes),
                format!("{}", data.len()),
            ));
        }
        Ok(Self { dims, num_classes, data })
    }

    fn validate(&self) -> Result<()> {
        let n = voxel_count(self.dims);
        let tol = Self::SUM_TOL;
        for v in &self.data {
            let f = v.as_f64();
            if !(-(tol)..=1.0 + tol).contains(&f) {
                return Err(Error::invalid(format!("probability {f} outside [0,1]")));
            }
        }
        for o in 0..n {
            let mut s = 0.0f64;
            for c in 0..self.num_classes {
                s += self.data[c * n + o].as_f64();
            }
            if (s - 1.0).abs() > tol {
                return Err(Error::invalid(format!("voxel {o} channel sum {s} != 1")));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_voxels(&self) -> usize {
        voxel_count(self.dims)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Probabilities of one class, one value per voxel.
    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.num_voxels();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, o: usize) -> T {
        self.data[c * self.num_voxels() + o]
    }

    /// Voxelwise argmax; ties resolve to the lowest class index.
    pub fn argmax(&self) -> LabelMap {
        let n = self.num_voxels();
        let mut labels = vec![0u8; n];
        for o in 0..n {
            let mut best_c = 0usize;
            let mut best = self.data[o];
            for c in 1..self.num_classes {
                let v = self.data[c * n + o];
                if v > best {
                    best = v;
                    best_c = c;
                }
            }
            labels[o] = best_c as u8;
        }
        LabelMap::new(self.dims, self.num_classes, labels).expect("argmax labels valid by construction")
    }

    /// One-hot encoding of a label map.
    pub fn one_hot(labels: &LabelMap) -> Self {
        let n = voxel_count(labels.dims());
        let c_total = labels.num_classes();
        let mut data = vec![T::zero(); n * c_total];
        for (o, &l) in labels.labels().iter().enumerate() {
            data[l as usize * n + o] = T::one();
        }
        Self {
            dims: labels.dims(),
            num_classes: c_total,
            data,
        }
    }

    pub fn cast<U: Real>(&self) -> ProbabilityMap<U> {
        ProbabilityMap {
            dims: self.dims,
            num_classes: self.num_classes,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// One non-negative scalar per voxel; consensus and combined maps stay in
/// [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap<T: Real> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Real> WeightMap<T> {
    pub fn new(dims: Dims, data: Vec<T>) -> Result<Self> {
        check_dims(dims)?;
        if data.len() != voxel_count(dims) {
            return Err(Error::shape(
                "WeightMap::new",
                format!("{} voxels for dims {dims:?}", voxel_count(dims)),
                format!("{}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::invalid("weight map values must be finite and >= 0"));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: Dims, value: T) -> Result<Self> {
        Self::new(dims, vec![value; voxel_count(dims)])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn cast<U: Real>(&self) -> WeightMap<U> {
        WeightMap {
            dims: self.dims,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Checks that two grids agree before a voxelwise operation.
pub fn ensure_same_dims(context: &str, a: Dims, b: Dims) -> Result<()> {
    if a != b {
        return Err(Error::shape(context, format!("{a:?}"), format!("{b:?}")));
    }
    Ok(())
}
