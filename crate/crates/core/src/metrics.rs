//! Overlap and surface-distance metrics.

use ndarray::{Array3, Axis};

use crate::volume::LabelMask;
use crate::{Error, Result};

fn check_shapes(a: &LabelMask, b: &LabelMask) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "mask shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `(|A|, |B|, |A ∩ B|)`
fn overlap_counts(a: &LabelMask, b: &LabelMask) -> (usize, usize, usize) {
    let mut na = 0;
    let mut nb = 0;
    let mut both = 0;
    for (&x, &y) in a.data().iter().zip(b.data().iter()) {
        na += x as usize;
        nb += y as usize;
        both += (x & y) as usize;
    }
    (na, nb, both)
}

/// `2|A∩B| / (|A| + |B|)`, 1.0 when both masks are empty.
pub fn dice(a: &LabelMask, b: &LabelMask) -> Result<f64> {
    check_shapes(a, b)?;
    let (na, nb, both) = overlap_counts(a, b);
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// `|A∩B| / |A∪B|`, 1.0 when both masks are empty.
pub fn jaccard(a: &LabelMask, b: &LabelMask) -> Result<f64> {
    check_shapes(a, b)?;
    let (na, nb, both) = overlap_counts(a, b);
    let union = na + nb - both;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(both as f64 / union as f64)
}

/// Exact Euclidean distance from every voxel to the nearest foreground voxel.
///
/// Separable lower-envelope-of-parabolas transform, one pass per axis.
/// `spacing` scales each axis (millimetres); `None` means voxel units.
pub fn edt(m: &LabelMask, spacing: Option<[f64; 3]>) -> Result<Array3<f64>> {
    if m.is_empty() {
        return Err(Error::Domain(
            "distance transform of an empty mask is undefined".into(),
        ));
    }
    let spacing = spacing.unwrap_or([1.0; 3]);
    let mut f = m
        .data()
        .mapv(|v| if v == 1 { 0.0 } else { f64::INFINITY });
    let mut scratch = Envelope::default();
    for axis in 0..3 {
        let s = spacing[axis];
        for mut lane in f.lanes_mut(Axis(axis)) {
            let input: Vec<f64> = lane.iter().copied().collect();
            scratch.transform(&input, s);
            for (dst, &v) in lane.iter_mut().zip(scratch.out.iter()) {
                *dst = v;
            }
        }
    }
    Ok(f.mapv_into(f64::sqrt))
}

#[derive(Default)]
struct Envelope {
    sites: Vec<usize>,
    bounds: Vec<f64>,
    out: Vec<f64>,
}

impl Envelope {
    /// 1D squared-distance transform: `out[p] = min_q f[q] + ((p - q)·s)²`.
    fn transform(&mut self, f: &[f64], s: f64) {
        let n = f.len();
        self.sites.clear();
        self.bounds.clear();
        self.out.clear();
        let pos = |q: usize| q as f64 * s;
        for q in 0..n {
            if !f[q].is_finite() {
                continue;
            }
            loop {
                let Some(&v) = self.sites.last() else {
                    self.sites.push(q);
                    break;
                };
                let x = ((f[q] + pos(q) * pos(q)) - (f[v] + pos(v) * pos(v)))
                    / (2.0 * (pos(q) - pos(v)));
                if self.bounds.last().is_some_and(|&b| x <= b) {
                    self.sites.pop();
                    self.bounds.pop();
                    continue;
                }
                self.sites.push(q);
                self.bounds.push(x);
                break;
            }
        }
        if self.sites.is_empty() {
            self.out.resize(n, f64::INFINITY);
            return;
        }
        let mut k = 0;
        for p in 0..n {
            while k < self.bounds.len() && self.bounds[k] < pos(p) {
                k += 1;
            }
            let q = self.sites[k];
            let d = pos(p) - pos(q);
            self.out.push(f[q] + d * d);
        }
    }
}

/// Foreground voxels with at least one 6-connected background neighbour;
/// voxels outside the grid count as background.
pub fn boundary(m: &LabelMask) -> LabelMask {
    let d = m.data();
    let [nx, ny, nz] = m.shape();
    let data = Array3::from_shape_fn((nx, ny, nz), |(x, y, z)| {
        if d[[x, y, z]] == 0 {
            return 0;
        }
        let at_edge = x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz;
        let exposed = at_edge
            || d[[x - 1, y, z]] == 0
            || d[[x + 1, y, z]] == 0
            || d[[x, y - 1, z]] == 0
            || d[[x, y + 1, z]] == 0
            || d[[x, y, z - 1]] == 0
            || d[[x, y, z + 1]] == 0;
        exposed as u8
    });
    LabelMask::new(data, *m.affine()).expect("boundary of a binary mask is binary")
}

/// Balanced average Hausdorff distance between boundary sets:
/// `(Σ_{g∈G} d(g, P) + Σ_{p∈P} d(p, G)) / (2|G|)`, with `G` the truth
/// boundary and `P` the prediction boundary. Empty prediction yields
/// `+inf` (logged as a warning).
pub fn balanced_ahd(truth: &LabelMask, pred: &LabelMask, spacing: Option<[f64; 3]>) -> Result<f64> {
    check_shapes(truth, pred)?;
    if truth.is_empty() {
        return Err(Error::Domain("balanced AHD needs a nonempty truth mask".into()));
    }
    if pred.is_empty() {
        log::warn!("empty prediction: balanced AHD is +inf");
        return Ok(f64::INFINITY);
    }
    balanced_ahd_boundaries(&boundary(truth), &boundary(pred), spacing)
}

/// Same formula applied directly to precomputed boundary sets.
pub fn balanced_ahd_boundaries(
    g: &LabelMask,
    p: &LabelMask,
    spacing: Option<[f64; 3]>,
) -> Result<f64> {
    check_shapes(g, p)?;
    let n_g = g.count();
    if n_g == 0 {
        return Err(Error::Domain("empty truth boundary".into()));
    }
    if p.is_empty() {
        return Ok(f64::INFINITY);
    }
    let to_p = edt(p, spacing)?;
    let to_g = edt(g, spacing)?;
    let mut total = 0.0;
    for ((&gv, &pv), (&dp, &dg)) in g
        .data()
        .iter()
        .zip(p.data().iter())
        .zip(to_p.iter().zip(to_g.iter()))
    {
        if gv == 1 {
            total += dp;
        }
        if pv == 1 {
            total += dg;
        }
    }
    Ok(total / (2.0 * n_g as f64))
}
