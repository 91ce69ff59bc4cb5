//! Voxel grids with voxel-to-world affines.
//!
//! Arrays are indexed `[x, y, z]` in voxel order; the affine maps the voxel
//! index `(i, j, k, 1)` to world millimetres.

mod geometry;

use nalgebra::{Matrix3, Matrix4, Vector4};
use ndarray::{Array3, Array4, Axis};

use crate::{Error, Result};

pub use geometry::{
    affine_from_rows, affine_to_rows, center_crop, mask_to_native, pad_to, preprocess, preprocess_mask,
    reorient_mask_ras, reorient_ras, resample_isotropic, resample_mask_nearest, resize_half, sample_trilinear,
    GridTarget, Provenance,
};

pub type Affine = Matrix4<f64>;

/// Upper-left 3×3 block of an affine.
pub fn linear_part(affine: &Affine) -> Matrix3<f64> {
    affine.fixed_view::<3, 3>(0, 0).into_owned()
}

/// Length of each voxel axis in millimetres (column norms of the linear part).
pub fn axis_spacing(affine: &Affine) -> [f64; 3] {
    let lin = linear_part(affine);
    [lin.column(0).norm(), lin.column(1).norm(), lin.column(2).norm()]
}

pub fn voxel_to_world(affine: &Affine, ijk: [f64; 3]) -> [f64; 3] {
    let w = affine * Vector4::new(ijk[0], ijk[1], ijk[2], 1.0);
    [w[0], w[1], w[2]]
}

pub fn diagonal_affine(spacing: [f64; 3]) -> Affine {
    Affine::new_nonuniform_scaling(&nalgebra::Vector3::new(spacing[0], spacing[1], spacing[2]))
}

fn check_affine(affine: &Affine) -> Result<()> {
    if affine.iter().any(|v| !v.is_finite()) {
        return Err(Error::Geometry("affine has non-finite entries".into()));
    }
    let det = linear_part(affine).determinant();
    if det.abs() < 1e-12 {
        return Err(Error::Geometry(format!(
            "affine linear part is singular (det = {det:e})"
        )));
    }
    Ok(())
}

pub(crate) fn shape3<T>(a: &Array3<T>) -> [usize; 3] {
    let s = a.shape();
    [s[0], s[1], s[2]]
}

/// Scalar intensity volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Array3<f64>,
    affine: Affine,
}

impl Volume {
    pub fn new(data: Array3<f64>, affine: Affine) -> Result<Self> {
        check_affine(&affine)?;
        if data.is_empty() {
            return Err(Error::Shape("volume has a zero-length axis".into()));
        }
        Ok(Self { data, affine })
    }

    /// Volume with an identity affine (1 mm voxels, RAS+).
    pub fn from_data(data: Array3<f64>) -> Self {
        Self::new(data, Affine::identity()).expect("identity affine is invertible")
    }

    pub fn shape(&self) -> [usize; 3] {
        shape3(&self.data)
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn affine(&self) -> &Affine {
        &self.affine
    }

    pub fn spacing(&self) -> [f64; 3] {
        axis_spacing(&self.affine)
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn with_data(&self, data: Array3<f64>) -> Result<Self> {
        Self::new(data, self.affine)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Binary voxel labelling (0 = background, 1 = foreground).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    data: Array3<u8>,
    affine: Affine,
}

impl LabelMask {
    pub fn new(data: Array3<u8>, affine: Affine) -> Result<Self> {
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Domain(format!("mask value {v} is not 0 or 1")));
        }
        check_affine(&affine)?;
        Ok(Self { data, affine })
    }

    pub fn from_data(data: Array3<u8>) -> Result<Self> {
        Self::new(data, Affine::identity())
    }

    pub fn zeros(shape: [usize; 3], affine: Affine) -> Self {
        Self {
            data: Array3::zeros(shape),
            affine,
        }
    }

    /// Threshold a predicate over voxel indices.
    pub fn from_fn(shape: [usize; 3], affine: Affine, mut f: impl FnMut([usize; 3]) -> bool) -> Self {
        let data = Array3::from_shape_fn(shape, |(x, y, z)| f([x, y, z]) as u8);
        Self { data, affine }
    }

    pub fn shape(&self) -> [usize; 3] {
        shape3(&self.data)
    }

    pub fn data(&self) -> &Array3<u8> {
        &self.data
    }

    pub fn affine(&self) -> &Affine {
        &self.affine
    }

    pub fn into_data(self) -> Array3<u8> {
        self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub(crate) fn from_raw(data: Array3<u8>, affine: Affine) -> Self {
        debug_assert!(data.iter().all(|&v| v <= 1));
        Self { data, affine }
    }
}

/// Per-voxel label distribution, stored `(label, x, y, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    data: Array4<f64>,
}

impl ProbMap {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(data: Array4<f64>) -> Result<Self> {
        if data.shape()[0] < 2 {
            return Err(Error::Shape("probability map needs at least 2 labels".into()));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("probability {v} outside [0, 1]")));
        }
        let sums = data.sum_axis(Axis(0));
        if let Some(s) = sums.iter().find(|s| (**s - 1.0).abs() > Self::SUM_TOLERANCE) {
            return Err(Error::Domain(format!(
                "per-voxel probabilities sum to {s}, not 1"
            )));
        }
        Ok(Self { data })
    }

    /// Two-label map from a foreground probability field.
    pub fn from_foreground(fg: &Array3<f64>) -> Result<Self> {
        let [nx, ny, nz] = shape3(fg);
        let mut data = Array4::zeros((2, nx, ny, nz));
        for ((x, y, z), &p) in fg.indexed_iter() {
            data[[0, x, y, z]] = 1.0 - p;
            data[[1, x, y, z]] = p;
        }
        Self::new(data)
    }

    pub fn labels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[1], s[2], s[3]]
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array4<f64> {
        self.data
    }

    /// Most probable label per voxel; ties resolve to the lower label.
    pub fn argmax(&self) -> Array3<u8> {
        argmax_labels(&self.data)
    }

    /// Binary mask of `argmax == 1`, carrying the given affine.
    pub fn argmax_mask(&self, affine: Affine) -> LabelMask {
        let labels = self.argmax();
        LabelMask::from_raw(labels.mapv(|l| (l == 1) as u8), affine)
    }
}

pub(crate) fn argmax_labels(data: &Array4<f64>) -> Array3<u8> {
    let s = data.shape();
    Array3::from_shape_fn((s[1], s[2], s[3]), |(x, y, z)| {
        let mut best = 0usize;
        for l in 1..s[0] {
            if data[[l, x, y, z]] > data[[best, x, y, z]] {
                best = l;
            }
        }
        best as u8
    })
}
