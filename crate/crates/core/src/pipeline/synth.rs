//! Synthetic head phantoms and sphere tasks with exact masks.

use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::augment::item_rng;
use crate::nifti::write_nifti;
use crate::volume::diagonal_affine;
use crate::{Error, LabelMask, Result, Volume};

pub const BRAIN_INTENSITY: f64 = 0.7;
pub const SKULL_INTENSITY: f64 = 0.9;
pub const NOISE_SIGMA: f64 = 0.05;
pub const MIN_SIZE: usize = 16;

#[derive(Debug, Clone)]
pub struct Phantom {
    pub image: Volume,
    pub mask: LabelMask,
    /// Voxels of the skull shell.
    pub skull: LabelMask,
}

/// Squared normalized ellipsoid radius of `p`.
fn ellipsoid_r2(p: [usize; 3], c: [f64; 3], r: [f64; 3]) -> f64 {
    (0..3).map(|a| ((p[a] as f64 - c[a]) / r[a]).powi(2)).sum()
}

fn noise(rng: &mut ChaCha8Rng, shape: [usize; 3], sigma: f64) -> Array3<f64> {
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    Array3::from_shape_simple_fn(shape, || normal.sample(rng))
}

/// Ellipsoidal brain (~0.7) inside a thin shell skull (~0.9), separated by a
/// dark gap, with Gaussian noise; 1 mm isotropic.
pub fn phantom(size: usize, rng: &mut ChaCha8Rng) -> Result<Phantom> {
    if size < MIN_SIZE {
        return Err(Error::Config(format!("phantom size must be at least {MIN_SIZE}, got {size}")));
    }
    let s = size as f64;
    let c = [0; 3].map(|_| (s - 1.0) / 2.0 + rng.random_range(-0.04..=0.04) * s);
    let r = [0; 3].map(|_| rng.random_range(0.22..=0.30) * s);
    let gap = (0.04 * s).max(1.0);
    let thick = (0.06 * s).max(1.5);
    let inner = r.map(|v| v + gap);
    let outer = r.map(|v| v + gap + thick);
    let shape = [size; 3];
    let affine = diagonal_affine([1.0; 3]);
    let mask = LabelMask::from_fn(shape, affine, |p| ellipsoid_r2(p, c, r) <= 1.0);
    let skull = LabelMask::from_fn(shape, affine, |p| {
        ellipsoid_r2(p, c, inner) > 1.0 && ellipsoid_r2(p, c, outer) <= 1.0
    });
    let mut data = noise(rng, shape, NOISE_SIGMA);
    ndarray::Zip::from(&mut data)
        .and(mask.data())
        .and(skull.data())
        .for_each(|v, &b, &k| {
            if b == 1 {
                *v += BRAIN_INTENSITY;
            } else if k == 1 {
                *v += SKULL_INTENSITY;
            }
        });
    Ok(Phantom {
        image: Volume::new(data, affine)?,
        mask,
        skull,
    })
}

/// Bright noisy ball on a dim background, for quick training experiments.
pub fn sphere_sample(size: usize, rng: &mut ChaCha8Rng) -> Result<(Volume, LabelMask)> {
    if size < 8 {
        return Err(Error::Config(format!("sphere size must be at least 8, got {size}")));
    }
    let s = size as f64;
    let c = [0; 3].map(|_| (s - 1.0) / 2.0 + rng.random_range(-0.12..=0.12) * s);
    let r = rng.random_range(0.15..=0.28) * s;
    let mask = LabelMask::from_fn([size; 3], diagonal_affine([1.0; 3]), |p| {
        ellipsoid_r2(p, c, [r; 3]) <= 1.0
    });
    let mut data = noise(rng, [size; 3], 0.1);
    ndarray::Zip::from(&mut data)
        .and(mask.data())
        .for_each(|v, &m| *v += if m == 1 { 0.8 } else { 0.2 });
    Ok((Volume::new(data, *mask.affine())?, mask))
}

pub fn sphere_dataset(n: usize, size: usize, seed: u64) -> Result<Vec<(Volume, LabelMask)>> {
    (0..n)
        .map(|i| sphere_sample(size, &mut item_rng(seed, i as u64)))
        .collect()
}

pub fn case_name(i: usize) -> String {
    format!("case_{i:03}.nii.gz")
}

/// Files written by [`synth`].
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub images: Vec<PathBuf>,
    pub masks: Vec<PathBuf>,
}

/// Write `n` phantoms to `out_dir/images` and `out_dir/masks`. Case `i`
/// depends only on `(seed, i)`.
pub fn synth(n: usize, size: usize, seed: u64, out_dir: &Path) -> Result<SynthOutput> {
    let img_dir = out_dir.join("images");
    let mask_dir = out_dir.join("masks");
    for d in [&img_dir, &mask_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut out = SynthOutput {
        images: Vec::with_capacity(n),
        masks: Vec::with_capacity(n),
    };
    for i in 0..n {
        let p = phantom(size, &mut item_rng(seed, i as u64))?;
        let ip = img_dir.join(case_name(i));
        let mp = mask_dir.join(case_name(i));
        write_nifti(&p.image, &ip)?;
        write_nifti(&p.mask, &mp)?;
        out.images.push(ip);
        out.masks.push(mp);
    }
    log::info!("wrote {n} phantoms of size {size} to {}", out_dir.display());
    Ok(out)
}
