//! Approximate message passing.
//!
//! The smoothness term is a separable Gaussian blur of each label field over
//! the voxel grid. The appearance term uses a bilateral grid over
//! `(x, y, z, intensity)`: values are splatted with multilinear weights onto a
//! lattice with `r` cells per kernel bandwidth, blurred with a
//! separable Gaussian, and sliced back with the same weights. The splat and
//! slice each act like a unit tent filter (variance 1/6 cell²), so the lattice
//! blur uses the reduced variance `r² − 1/3` and the result is rescaled so the
//! end-to-end kernel matches the unnormalized Gaussian.

use ndarray::Array4;

use super::{normalized_intensity, CrfConfig};
use crate::volume::{ProbMap, Volume};
use crate::Result;

/// Lattice resolutions tried in order; the first that fits `MAX_LATTICE_CELLS` wins.
const CELLS_PER_SIGMA: [f64; 5] = [3.0, 2.5, 2.0, 1.5, 1.0];
const MAX_LATTICE_CELLS: usize = 1 << 24;
/// Blur kernels are truncated at this many standard deviations.
const TRUNCATE_SIGMAS: f64 = 3.0;

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (TRUNCATE_SIGMAS * sigma).ceil() as isize;
    (-r..=r)
        .map(|n| (-(n as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// In-place 1D convolution along `axis` of a row-major buffer (zero outside).
fn blur_axis(buf: &mut [f64], dims: &[usize], axis: usize, taps: &[f64]) {
    let n = dims[axis];
    if n == 0 || taps.len() == 1 {
        return;
    }
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let r = (taps.len() / 2) as isize;
    let mut line = vec![0.0; n];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            for (k, v) in line.iter_mut().enumerate() {
                *v = buf[base + k * inner];
            }
            for k in 0..n {
                let lo = (k as isize - r).max(0) as usize;
                let hi = ((k as isize + r) as usize).min(n - 1);
                let mut acc = 0.0;
                for (j, &lv) in line.iter().enumerate().take(hi + 1).skip(lo) {
                    acc += taps[(j as isize - k as isize + r) as usize] * lv;
                }
                buf[base + k * inner] = acc;
            }
        }
    }
}

struct Lattice {
    dims: [usize; 4],
    /// Voxel-to-cell scale per axis (cells per voxel, cells per intensity unit).
    scale: [f64; 4],
    taps: Vec<f64>,
    /// Rescaling that turns the blurred lattice into an unnormalized Gaussian.
    gain: f64,
    /// Lattice blur value at one cell offset.
    neighbour: f64,
}

impl Lattice {
    fn new(shape: [usize; 3], spacing: [f64; 3], cfg: &CrfConfig) -> Self {
        let layout = |r: f64| {
            let mut scale = [0.0; 4];
            let mut dims = [0usize; 4];
            for a in 0..3 {
                let sigma_vox = cfg.theta_alpha / spacing[a];
                scale[a] = r / sigma_vox;
                dims[a] = ((shape[a] - 1) as f64 * scale[a]).floor() as usize + 2;
            }
            scale[3] = r / cfg.theta_beta;
            dims[3] = scale[3].floor() as usize + 2;
            (scale, dims)
        };
        let mut chosen = None;
        for &r in &CELLS_PER_SIGMA {
            let (scale, dims) = layout(r);
            if dims.iter().product::<usize>() <= MAX_LATTICE_CELLS {
                chosen = Some((r, scale, dims));
                break;
            }
        }
        let (r, scale, dims) = chosen.unwrap_or_else(|| {
            let r = CELLS_PER_SIGMA[CELLS_PER_SIGMA.len() - 1];
            let (s, d) = layout(r);
            (r, s, d)
        });
        if r < CELLS_PER_SIGMA[0] {
            log::debug!("bilateral lattice coarsened to {r} cells per sigma ({dims:?})");
        }
        let sigma_b = (r * r - 1.0 / 3.0).sqrt();
        Self {
            dims,
            scale,
            taps: gaussian_taps(sigma_b),
            gain: (r / sigma_b).powi(4),
            neighbour: (-1.0 / (2.0 * sigma_b * sigma_b)).exp(),
        }
    }

    fn len(&self) -> usize {
        self.dims.iter().product()
    }

    /// Base cell and fractional offsets of a point.
    fn locate(&self, x: usize, y: usize, z: usize, intensity: f64) -> ([usize; 4], [f64; 4]) {
        let p = [x as f64, y as f64, z as f64, intensity];
        let mut base = [0usize; 4];
        let mut frac = [0.0; 4];
        for a in 0..4 {
            let g = (p[a] * self.scale[a]).max(0.0);
            let c = (g.floor() as usize).min(self.dims[a] - 2);
            base[a] = c;
            frac[a] = g - c as f64;
        }
        (base, frac)
    }

    fn corners(&self, base: [usize; 4], frac: [f64; 4]) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..16usize).map(move |bits| {
            let mut idx = 0usize;
            let mut w = 1.0;
            for a in 0..4 {
                let on = (bits >> (3 - a)) & 1;
                idx = idx * self.dims[a] + base[a] + on;
                w *= if on == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            (idx, w)
        })
    }

    /// End-to-end kernel value of a point with itself.
    fn self_weight(&self, frac: [f64; 4]) -> f64 {
        let per_axis = |t: f64| (1.0 - t).powi(2) + t * t + 2.0 * t * (1.0 - t) * self.neighbour;
        self.gain * frac.iter().map(|&t| per_axis(t)).product::<f64>()
    }
}

/// Approximate `Σ_{j≠i} k(f_i, f_j) q_j(l)` for every voxel and label.
pub fn filtered_message_pass(q: &ProbMap, vol: &Volume, cfg: &CrfConfig) -> Result<Array4<f64>> {
    cfg.validate()?;
    super::check_shapes(q.shape(), vol)?;
    let shape = q.shape();
    let spacing = vol.spacing();
    let intensity = normalized_intensity(vol);
    let mut out = Array4::<f64>::zeros(q.data().raw_dim());
    let n: usize = shape.iter().product();

    let lattice = (cfg.w_appearance > 0.0).then(|| Lattice::new(shape, spacing, cfg));
    let smooth_taps: Vec<Vec<f64>> = (0..3)
        .map(|a| {
            let sigma = cfg.theta_gamma / spacing[a];
            gaussian_taps(sigma)
        })
        .collect();

    for l in 0..q.labels() {
        let field: Vec<f64> = q.data().index_axis(ndarray::Axis(0), l).iter().copied().collect();
        let mut msg = vec![0.0; n];

        if cfg.w_smoothness > 0.0 {
            let mut g = field.clone();
            for (a, taps) in smooth_taps.iter().enumerate() {
                blur_axis(&mut g, &shape, a, taps);
            }
            for ((m, gv), fv) in msg.iter_mut().zip(&g).zip(&field) {
                *m += cfg.w_smoothness * (gv - fv);
            }
        }

        if let Some(lat) = &lattice {
            let mut grid = vec![0.0; lat.len()];
            for ((x, y, z), &iv) in intensity.indexed_iter() {
                let qv = field[(x * shape[1] + y) * shape[2] + z];
                if qv == 0.0 {
                    continue;
                }
                let (base, frac) = lat.locate(x, y, z, iv);
                for (idx, w) in lat.corners(base, frac) {
                    grid[idx] += w * qv;
                }
            }
            for a in 0..4 {
                blur_axis(&mut grid, &lat.dims, a, &lat.taps);
            }
            for ((x, y, z), &iv) in intensity.indexed_iter() {
                let i = (x * shape[1] + y) * shape[2] + z;
                let (base, frac) = lat.locate(x, y, z, iv);
                let sliced: f64 = lat.corners(base, frac).map(|(idx, w)| w * grid[idx]).sum();
                let own = lat.self_weight(frac) * field[i];
                msg[i] += cfg.w_appearance * (lat.gain * sliced - own);
            }
        }

        for (dst, v) in out.index_axis_mut(ndarray::Axis(0), l).iter_mut().zip(msg) {
            *dst = v;
        }
    }
    Ok(out)
}
