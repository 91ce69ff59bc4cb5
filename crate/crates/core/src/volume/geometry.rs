use nalgebra::Vector4;
use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use super::{axis_spacing, check_affine, linear_part, shape3, Affine, LabelMask, Volume};
use crate::{Error, Result};

/// Resampling target for the preprocessing chain: isotropic spacing, then a
/// centered pad to `pad`, then a 2× downsample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridTarget {
    pub spacing_mm: f64,
    pub pad: [usize; 3],
}

impl GridTarget {
    /// 1 mm, padded to 256³, network grid 128³ at 2 mm.
    pub const FULL: GridTarget = GridTarget {
        spacing_mm: 1.0,
        pad: [256, 256, 256],
    };
    /// 1 mm, padded to 64³, network grid 32³ at 2 mm.
    pub const DESK: GridTarget = GridTarget {
        spacing_mm: 1.0,
        pad: [64, 64, 64],
    };

    pub fn network_shape(&self) -> [usize; 3] {
        self.pad.map(|p| p / 2)
    }
}

impl Default for GridTarget {
    fn default() -> Self {
        Self::DESK
    }
}

/// Everything needed to map a network-grid mask back to the native grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub native_shape: [usize; 3],
    pub native_affine: [[f64; 4]; 4],
    pub resampled_shape: [usize; 3],
    pub resampled_affine: [[f64; 4]; 4],
    pub pad_offsets: [usize; 3],
    pub padded_shape: [usize; 3],
    pub resized_shape: [usize; 3],
    pub resized_affine: [[f64; 4]; 4],
}

pub fn affine_to_rows(a: &Affine) -> [[f64; 4]; 4] {
    let mut rows = [[0.0; 4]; 4];
    for (r, row) in rows.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = a[(r, c)];
        }
    }
    rows
}

pub fn affine_from_rows(rows: &[[f64; 4]; 4]) -> Affine {
    Affine::from_fn(|r, c| rows[r][c])
}

/// Reorient to RAS+: each voxel axis is assigned to the world axis its
/// direction cosine points along most strongly, then flipped if it points
/// negatively. World coordinates of every voxel are unchanged.
pub fn reorient_ras(v: &Volume) -> Result<Volume> {
    let (perm, flip) = ras_axes(v.affine())?;
    if perm == [0, 1, 2] && flip == [false; 3] {
        return Ok(v.clone());
    }
    let mut data = v.data().view().permuted_axes(perm);
    for (axis, &f) in flip.iter().enumerate() {
        if f {
            data.invert_axis(Axis(axis));
        }
    }
    let data = data.as_standard_layout().to_owned();
    let affine = v.affine() * index_map(&perm, &flip, v.shape());
    Volume::new(data, affine)
}

/// Same axis assignment applied to a mask sharing the image's affine.
pub fn reorient_mask_ras(m: &LabelMask) -> Result<LabelMask> {
    let (perm, flip) = ras_axes(m.affine())?;
    if perm == [0, 1, 2] && flip == [false; 3] {
        return Ok(m.clone());
    }
    let mut data = m.data().view().permuted_axes(perm);
    for (axis, &f) in flip.iter().enumerate() {
        if f {
            data.invert_axis(Axis(axis));
        }
    }
    let data = data.as_standard_layout().to_owned();
    let affine = m.affine() * index_map(&perm, &flip, m.shape());
    Ok(LabelMask::from_raw(data, affine))
}

/// Returns `(perm, flip)`: output axis `i` reads input axis `perm[i]`,
/// reversed when `flip[i]`.
fn ras_axes(affine: &Affine) -> Result<([usize; 3], [bool; 3])> {
    check_affine(affine)?;
    let lin = linear_part(affine);
    let mut cos = lin;
    for j in 0..3 {
        let n = lin.column(j).norm();
        for i in 0..3 {
            cos[(i, j)] = lin[(i, j)] / n;
        }
    }
    let mut used_world = [false; 3];
    let mut used_voxel = [false; 3];
    let mut world_of = [0usize; 3];
    let mut negative = [false; 3];
    for _ in 0..3 {
        let mut best: Option<(usize, usize, f64)> = None;
        for j in 0..3 {
            if used_voxel[j] {
                continue;
            }
            for i in 0..3 {
                if used_world[i] {
                    continue;
                }
                let c = cos[(i, j)].abs();
                if best.is_none_or(|(_, _, b)| c > b) {
                    best = Some((i, j, c));
                }
            }
        }
        let (i, j, _) = best.expect("3x3 assignment always completes");
        used_world[i] = true;
        used_voxel[j] = true;
        world_of[j] = i;
        negative[j] = cos[(i, j)] < 0.0;
    }
    let mut perm = [0usize; 3];
    let mut flip = [false; 3];
    for j in 0..3 {
        perm[world_of[j]] = j;
        flip[world_of[j]] = negative[j];
    }
    Ok((perm, flip))
}

/// Homogeneous map from new voxel indices to old voxel indices.
fn index_map(perm: &[usize; 3], flip: &[bool; 3], old_shape: [usize; 3]) -> Affine {
    let mut t = Affine::zeros();
    t[(3, 3)] = 1.0;
    for i in 0..3 {
        let j = perm[i];
        if flip[i] {
            t[(j, i)] = -1.0;
            t[(j, 3)] = (old_shape[j] - 1) as f64;
        } else {
            t[(j, i)] = 1.0;
        }
    }
    t
}

#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    w: f64,
}

/// Linear-interpolation taps along one axis. Coordinates within the voxel
/// extent `[-0.5, n - 0.5]` clamp to the edge; anything further out is `None`.
fn axis_tap(c: f64, n: usize) -> Option<Tap> {
    const SLACK: f64 = 1e-9;
    if c < -0.5 - SLACK || c > n as f64 - 0.5 + SLACK {
        return None;
    }
    let c = c.clamp(0.0, (n - 1) as f64);
    let lo = c.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    Some(Tap {
        lo,
        hi,
        w: c - lo as f64,
    })
}

/// Trilinear sample at a continuous voxel coordinate; 0 outside the grid.
pub fn sample_trilinear(data: &Array3<f64>, c: [f64; 3]) -> f64 {
    let n = shape3(data);
    let (Some(tx), Some(ty), Some(tz)) = (
        axis_tap(c[0], n[0]),
        axis_tap(c[1], n[1]),
        axis_tap(c[2], n[2]),
    ) else {
        return 0.0;
    };
    trilinear(data, tx, ty, tz)
}

#[inline]
fn trilinear(data: &Array3<f64>, tx: Tap, ty: Tap, tz: Tap) -> f64 {
    let lerp = |a: f64, b: f64, w: f64| if w == 0.0 { a } else { a + (b - a) * w };
    let at = |x, y, z| data[[x, y, z]];
    let c00 = lerp(at(tx.lo, ty.lo, tz.lo), at(tx.hi, ty.lo, tz.lo), tx.w);
    let c10 = lerp(at(tx.lo, ty.hi, tz.lo), at(tx.hi, ty.hi, tz.lo), tx.w);
    let c01 = lerp(at(tx.lo, ty.lo, tz.hi), at(tx.hi, ty.lo, tz.hi), tx.w);
    let c11 = lerp(at(tx.lo, ty.hi, tz.hi), at(tx.hi, ty.hi, tz.hi), tx.w);
    let c0 = lerp(c00, c10, ty.w);
    let c1 = lerp(c01, c11, ty.w);
    lerp(c0, c1, tz.w)
}

/// Resample onto an isotropic grid with the same axis directions. The output
/// grid has `ceil(extent / spacing)` voxels per axis and is centered on the
/// input's physical extent.
pub fn resample_isotropic(v: &Volume, spacing_mm: f64) -> Result<Volume> {
    if !(spacing_mm > 0.0) || !spacing_mm.is_finite() {
        return Err(Error::Geometry(format!(
            "target spacing {spacing_mm} must be positive"
        )));
    }
    let (shape, starts, steps) = isotropic_grid(v.affine(), v.shape(), spacing_mm)?;
    let taps: Vec<Vec<Option<Tap>>> = (0..3)
        .map(|a| {
            (0..shape[a])
                .map(|k| axis_tap(starts[a] + k as f64 * steps[a], v.shape()[a]))
                .collect()
        })
        .collect();
    let src = v.data();
    let data = Array3::from_shape_fn(shape, |(x, y, z)| {
        match (taps[0][x], taps[1][y], taps[2][z]) {
            (Some(tx), Some(ty), Some(tz)) => trilinear(src, tx, ty, tz),
            _ => 0.0,
        }
    });
    let affine = v.affine() * grid_affine(starts, steps);
    Volume::new(data, affine)
}

/// Output shape, first sample coordinate and step (both in input voxel units).
fn isotropic_grid(
    affine: &Affine,
    shape: [usize; 3],
    spacing_mm: f64,
) -> Result<([usize; 3], [f64; 3], [f64; 3])> {
    let sp = axis_spacing(affine);
    let mut out = [0usize; 3];
    let mut starts = [0.0; 3];
    let mut steps = [0.0; 3];
    for a in 0..3 {
        let extent = shape[a] as f64 * sp[a];
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(Error::Geometry(format!(
                "physical extent along axis {a} is {extent}"
            )));
        }
        let n = ((extent / spacing_mm) - 1e-9).ceil().max(1.0) as usize;
        let offset = (extent - n as f64 * spacing_mm) / 2.0;
        out[a] = n;
        starts[a] = -0.5 + (offset + 0.5 * spacing_mm) / sp[a];
        steps[a] = spacing_mm / sp[a];
    }
    Ok((out, starts, steps))
}

fn grid_affine(starts: [f64; 3], steps: [f64; 3]) -> Affine {
    let mut t = Affine::identity();
    for a in 0..3 {
        t[(a, a)] = steps[a];
        t[(a, 3)] = starts[a];
    }
    t
}

/// Center the volume in a zero-filled grid of shape `target`.
/// Offsets are `floor((target - shape) / 2)` per axis.
pub fn pad_to(v: &Volume, target: [usize; 3]) -> Result<(Volume, [usize; 3])> {
    let (data, offsets) = pad_array(v.data(), target)?;
    let affine = v.affine() * translation(offsets.map(|o| -(o as f64)));
    Ok((Volume::new(data, affine)?, offsets))
}

fn pad_array<T: Clone + Default>(
    src: &Array3<T>,
    target: [usize; 3],
) -> Result<(Array3<T>, [usize; 3])> {
    let shape = shape3(src);
    if (0..3).any(|a| shape[a] > target[a]) {
        return Err(Error::Size(format!(
            "cannot pad {shape:?} into {target:?}; crop or resample first"
        )));
    }
    let offsets = [0, 1, 2].map(|a| (target[a] - shape[a]) / 2);
    let mut data = Array3::<T>::default(target);
    data.slice_mut(ndarray::s![
        offsets[0]..offsets[0] + shape[0],
        offsets[1]..offsets[1] + shape[1],
        offsets[2]..offsets[2] + shape[2]
    ])
    .assign(src);
    Ok((data, offsets))
}

fn translation(t: [f64; 3]) -> Affine {
    let mut m = Affine::identity();
    for a in 0..3 {
        m[(a, 3)] = t[a];
    }
    m
}

/// Inverse of [`pad_to`]: extract `shape` voxels starting at `offsets`.
pub fn center_crop(v: &Volume, offsets: [usize; 3], shape: [usize; 3]) -> Result<Volume> {
    let data = crop_array(v.data(), offsets, shape)?;
    let affine = v.affine() * translation(offsets.map(|o| o as f64));
    Volume::new(data, affine)
}

fn crop_array<T: Clone>(
    src: &Array3<T>,
    offsets: [usize; 3],
    shape: [usize; 3],
) -> Result<Array3<T>> {
    let have = shape3(src);
    if (0..3).any(|a| offsets[a] + shape[a] > have[a]) {
        return Err(Error::Geometry(format!(
            "crop {shape:?} at {offsets:?} exceeds grid {have:?}"
        )));
    }
    Ok(src
        .slice(ndarray::s![
            offsets[0]..offsets[0] + shape[0],
            offsets[1]..offsets[1] + shape[1],
            offsets[2]..offsets[2] + shape[2]
        ])
        .to_owned())
}

/// Halve every axis by 2×2×2 averaging; voxel spacing doubles.
pub fn resize_half(v: &Volume) -> Result<Volume> {
    let shape = v.shape();
    if shape.iter().any(|n| n % 2 != 0) {
        return Err(Error::Size(format!(
            "resize_half needs even dimensions, got {shape:?}"
        )));
    }
    let src = v.data();
    let data = Array3::from_shape_fn(shape.map(|n| n / 2), |(x, y, z)| {
        let mut acc = 0.0;
        for dx in 0..2 {
            for dy in 0..2 {
                for dz in 0..2 {
                    acc += src[[2 * x + dx, 2 * y + dy, 2 * z + dz]];
                }
            }
        }
        acc / 8.0
    });
    Volume::new(data, v.affine() * grid_affine([0.5; 3], [2.0; 3]))
}

/// Run the full forward chain: RAS+ reorientation, isotropic resampling,
/// centered padding and the 2× downsample.
pub fn preprocess(v: &Volume, target: &GridTarget) -> Result<(Volume, Provenance)> {
    if target.pad.iter().any(|p| p % 2 != 0) {
        return Err(Error::Size(format!(
            "pad target {:?} must be even",
            target.pad
        )));
    }
    let ras = reorient_ras(v)?;
    let resampled = resample_isotropic(&ras, target.spacing_mm)?;
    let (padded, offsets) = pad_to(&resampled, target.pad)?;
    let resized = resize_half(&padded)?;
    let prov = Provenance {
        native_shape: v.shape(),
        native_affine: affine_to_rows(v.affine()),
        resampled_shape: resampled.shape(),
        resampled_affine: affine_to_rows(resampled.affine()),
        pad_offsets: offsets,
        padded_shape: padded.shape(),
        resized_shape: resized.shape(),
        resized_affine: affine_to_rows(resized.affine()),
    };
    Ok((resized, prov))
}

/// Forward chain for a mask: same geometry as [`preprocess`] but
/// nearest-neighbour resampling and majority-vote downsampling.
pub fn preprocess_mask(m: &LabelMask, prov: &Provenance) -> Result<LabelMask> {
    let ras = reorient_mask_ras(m)?;
    let resampled = resample_mask_nearest(
        &ras,
        prov.resampled_shape,
        affine_from_rows(&prov.resampled_affine),
    )?;
    let (padded, _) = pad_array(resampled.data(), prov.padded_shape)?;
    let half = prov.resized_shape;
    let data = Array3::from_shape_fn(half, |(x, y, z)| {
        let mut n = 0u8;
        for dx in 0..2 {
            for dy in 0..2 {
                for dz in 0..2 {
                    n += padded[[2 * x + dx, 2 * y + dy, 2 * z + dz]];
                }
            }
        }
        (n >= 4) as u8
    });
    Ok(LabelMask::from_raw(
        data,
        affine_from_rows(&prov.resized_affine),
    ))
}

/// Nearest-neighbour resampling of a mask onto an arbitrary grid via the
/// world coordinates of the target voxel centers. Outside samples are 0.
pub fn resample_mask_nearest(
    m: &LabelMask,
    shape: [usize; 3],
    affine: Affine,
) -> Result<LabelMask> {
    check_affine(&affine)?;
    let inv = m
        .affine()
        .try_inverse()
        .ok_or_else(|| Error::Geometry("mask affine is not invertible".into()))?;
    let map = inv * affine;
    let src = m.data();
    let n = m.shape();
    let data = Array3::from_shape_fn(shape, |(x, y, z)| {
        let c = map * Vector4::new(x as f64, y as f64, z as f64, 1.0);
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let r = (c[a] + 1e-9).round();
            if r < 0.0 || r >= n[a] as f64 {
                return 0;
            }
            idx[a] = r as usize;
        }
        src[idx]
    });
    Ok(LabelMask::from_raw(data, affine))
}

/// Inverse of the forward chain for a network-grid mask: nearest-neighbour
/// upsample, crop away the padding, nearest-neighbour resample to the native
/// grid of `original`.
pub fn mask_to_native(m: &LabelMask, original: &Volume, prov: &Provenance) -> Result<LabelMask> {
    if original.shape() != prov.native_shape {
        return Err(Error::Geometry(format!(
            "provenance records native shape {:?}, original volume is {:?}",
            prov.native_shape,
            original.shape()
        )));
    }
    let native = affine_from_rows(&prov.native_affine);
    if (native - original.affine()).abs().max() > 1e-6 {
        return Err(Error::Geometry(
            "provenance native affine does not match the original volume".into(),
        ));
    }
    if m.shape() != prov.resized_shape {
        return Err(Error::Geometry(format!(
            "mask shape {:?} does not match provenance network grid {:?}",
            m.shape(),
            prov.resized_shape
        )));
    }
    if (0..3).any(|a| {
        prov.padded_shape[a] != 2 * prov.resized_shape[a]
            || prov.pad_offsets[a] + prov.resampled_shape[a] > prov.padded_shape[a]
    }) {
        return Err(Error::Geometry("inconsistent padding provenance".into()));
    }
    let src = m.data();
    let up = Array3::from_shape_fn(prov.padded_shape, |(x, y, z)| src[[x / 2, y / 2, z / 2]]);
    let cropped = crop_array(&up, prov.pad_offsets, prov.resampled_shape)?;
    let on_resampled = LabelMask::from_raw(cropped, affine_from_rows(&prov.resampled_affine));
    resample_mask_nearest(&on_resampled, original.shape(), *original.affine())
}
