//! Training-time augmentation: random intensity scale/shift and a random
//! rigid motion shared by image and mask.

use nalgebra::{Matrix3, Rotation3, Vector3};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::volume::{sample_trilinear, LabelMask, Volume};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Multiplicative factor range.
    pub scale: [f64; 2],
    /// Additive offset range, as a fraction of the volume's intensity range.
    pub shift: [f64; 2],
    /// Maximum absolute Euler angle per axis, degrees.
    pub rot_deg: f64,
    /// Maximum absolute translation per axis, voxels.
    pub trans_vox: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            scale: [0.9, 1.1],
            shift: [-0.05, 0.05],
            rot_deg: 10.0,
            trans_vox: 5.0,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// No-op augmentation.
    pub fn identity() -> Self {
        Self {
            scale: [1.0, 1.0],
            shift: [0.0, 0.0],
            rot_deg: 0.0,
            trans_vox: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_range("aug.scale", self.scale)?;
        if self.scale[0] <= 0.0 {
            return Err(Error::Config("aug.scale must be positive".into()));
        }
        check_range("aug.shift", self.shift)?;
        for (name, v) in [("aug.rot_deg", self.rot_deg), ("aug.trans_vox", self.trans_vox)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::Config(format!("{name} must be a finite [lo, hi] range, got {r:?}")));
    }
    Ok(())
}

fn draw(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

/// Independent stream for item `index` under a master seed, so results do not
/// depend on the order items are processed in.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `s·v + t` with `s ~ U(scale_range)` and `t ~ U(shift_range)`, drawn once.
pub fn intensity_augment(
    v: &Volume,
    rng: &mut ChaCha8Rng,
    scale_range: [f64; 2],
    shift_range: [f64; 2],
) -> Result<Volume> {
    check_range("scale range", scale_range)?;
    check_range("shift range", shift_range)?;
    if scale_range[0] <= 0.0 {
        return Err(Error::Config("scale range must be positive".into()));
    }
    let s = draw(rng, scale_range);
    let t = draw(rng, shift_range);
    v.with_data(v.data().mapv(|x| s * x + t))
}

/// Rotation about the volume centre followed by a translation, in voxel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: [0.0; 3],
        }
    }

    /// Rotation `Rz·Ry·Rx` from Euler angles in degrees.
    pub fn from_euler_deg(angles: [f64; 3], translation: [f64; 3]) -> Self {
        let [a, b, c] = angles.map(f64::to_radians);
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), c)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), b)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), a);
        Self {
            rotation: *r.matrix(),
            translation,
        }
    }

    pub fn random(rng: &mut ChaCha8Rng, max_rot_deg: f64, max_trans_vox: f64) -> Self {
        let angles = [0; 3].map(|_| draw(rng, [-max_rot_deg, max_rot_deg]));
        let translation = [0; 3].map(|_| draw(rng, [-max_trans_vox, max_trans_vox]));
        Self::from_euler_deg(angles, translation)
    }

    /// Source coordinate that lands on output voxel `o`.
    fn source(&self, o: [usize; 3], center: Vector3<f64>) -> [f64; 3] {
        let p = Vector3::new(o[0] as f64, o[1] as f64, o[2] as f64)
            - center
            - Vector3::from(self.translation);
        let s = self.rotation.transpose() * p + center;
        [s[0], s[1], s[2]]
    }
}

fn center_of(shape: [usize; 3]) -> Vector3<f64> {
    Vector3::new(
        (shape[0] as f64 - 1.0) / 2.0,
        (shape[1] as f64 - 1.0) / 2.0,
        (shape[2] as f64 - 1.0) / 2.0,
    )
}

/// Apply one transform to an image (trilinear) and its mask (nearest);
/// voxels mapped from outside the grid become 0.
pub fn apply_rigid(v: &Volume, m: &LabelMask, t: &RigidTransform) -> Result<(Volume, LabelMask)> {
    let shape = v.shape();
    if m.shape() != shape {
        return Err(Error::Shape(format!(
            "image {shape:?} and mask {:?} differ in shape",
            m.shape()
        )));
    }
    if *t == RigidTransform::identity() {
        return Ok((v.clone(), m.clone()));
    }
    let c = center_of(shape);
    let img = Array3::from_shape_fn(shape, |(x, y, z)| sample_trilinear(v.data(), t.source([x, y, z], c)));
    let mdata = m.data();
    let mask = Array3::from_shape_fn(shape, |(x, y, z)| {
        let s = t.source([x, y, z], c);
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let r = s[a].round();
            if r < 0.0 || r >= shape[a] as f64 {
                return 0;
            }
            idx[a] = r as usize;
        }
        mdata[idx]
    });
    Ok((v.with_data(img)?, LabelMask::new(mask, *m.affine())?))
}

pub fn rigid_augment(
    v: &Volume,
    m: &LabelMask,
    rng: &mut ChaCha8Rng,
    max_rot_deg: f64,
    max_trans_vox: f64,
) -> Result<(Volume, LabelMask)> {
    if !(max_rot_deg >= 0.0 && max_trans_vox >= 0.0) {
        return Err(Error::Config("rigid bounds must be non-negative".into()));
    }
    apply_rigid(v, m, &RigidTransform::random(rng, max_rot_deg, max_trans_vox))
}

/// Full augmentation of training item `index`: rigid motion, then intensity.
pub fn augment_pair(v: &Volume, m: &LabelMask, cfg: &AugmentConfig, index: u64) -> Result<(Volume, LabelMask)> {
    cfg.validate()?;
    let mut rng = item_rng(cfg.seed, index);
    let (img, mask) = rigid_augment(v, m, &mut rng, cfg.rot_deg, cfg.trans_vox)?;
    let (lo, hi) = v.min_max();
    let range = (hi - lo).max(f64::MIN_POSITIVE);
    let img = intensity_augment(&img, &mut rng, cfg.scale, [cfg.shift[0] * range, cfg.shift[1] * range])?;
    Ok((img, mask))
}
