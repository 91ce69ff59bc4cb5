//! Fully connected CRF over voxels with Potts compatibility, refined by
//! mean-field inference.
//!
//! The pairwise kernel is the usual two-term Gaussian mix
//!
//! ```text
//! k(fi, fj) = w_app · exp(−|pi−pj|²/2θα² − |Ii−Ij|²/2θβ²) + w_smooth · exp(−|pi−pj|²/2θγ²)
//! ```
//!
//! with positions in millimetres (voxel index times axis spacing) and
//! intensities rescaled to `[0, 1]` per volume. The brute backend sums over
//! all voxel pairs; the filtered backend approximates the same sums with a
//! separable Gaussian blur and a bilateral grid.

mod filtered;

use ndarray::{Array3, Array4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::volume::{LabelMask, ProbMap, Volume};
use crate::{Error, Result};

pub use filtered::filtered_message_pass;

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-6;
/// Voxel limit for the exact O(N²) energy.
pub const EXACT_ENERGY_MAX_VOXELS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrfBackend {
    Brute,
    Filtered,
}

impl std::str::FromStr for CrfBackend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brute" => Ok(Self::Brute),
            "filtered" => Ok(Self::Filtered),
            _ => Err(Error::Config(format!("unknown CRF backend '{s}' (brute|filtered)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateOrder {
    /// All voxels updated from the previous marginals.
    Parallel,
    /// Voxels updated one at a time in scan order (brute backend only).
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfConfig {
    pub w_appearance: f64,
    pub w_smoothness: f64,
    /// Appearance kernel spatial bandwidth (mm).
    pub theta_alpha: f64,
    /// Appearance kernel intensity bandwidth (normalized intensity units).
    pub theta_beta: f64,
    /// Smoothness kernel bandwidth (mm).
    pub theta_gamma: f64,
    pub iterations: usize,
    pub backend: CrfBackend,
    pub update_order: UpdateOrder,
}

impl Default for CrfConfig {
    fn default() -> Self {
        Self {
            w_appearance: 5.0,
            w_smoothness: 3.0,
            theta_alpha: 4.0,
            theta_beta: 0.1,
            theta_gamma: 3.0,
            iterations: 5,
            backend: CrfBackend::Filtered,
            update_order: UpdateOrder::Parallel,
        }
    }
}

impl CrfConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w_appearance", self.w_appearance), ("w_smoothness", self.w_smoothness)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        for (name, v) in [
            ("theta_alpha", self.theta_alpha),
            ("theta_beta", self.theta_beta),
            ("theta_gamma", self.theta_gamma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.backend == CrfBackend::Filtered && self.update_order == UpdateOrder::Sequential {
            return Err(Error::Config(
                "sequential updates need the brute backend".into(),
            ));
        }
        Ok(())
    }

    fn has_pairwise(&self) -> bool {
        self.w_appearance > 0.0 || self.w_smoothness > 0.0
    }
}

/// Per-voxel label costs `ψ_u = −log P`, stored `(label, x, y, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryField {
    pub neg_log_probs: Array4<f64>,
}

impl UnaryField {
    pub fn labels(&self) -> usize {
        self.neg_log_probs.shape()[0]
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.neg_log_probs.shape();
        [s[1], s[2], s[3]]
    }

    /// `softmax(−ψ_u)` per voxel.
    pub fn probabilities(&self) -> ProbMap {
        let fields = to_fields(&self.neg_log_probs);
        let n = fields[0].len();
        let mut out = vec![vec![0.0; n]; fields.len()];
        for i in 0..n {
            let lo = fields.iter().map(|f| f[i]).fold(f64::INFINITY, f64::min);
            let mut z = 0.0;
            for (o, f) in out.iter_mut().zip(&fields) {
                o[i] = (lo - f[i]).exp();
                z += o[i];
            }
            for o in out.iter_mut() {
                o[i] /= z;
            }
        }
        ProbMap::new(from_fields(&out, self.shape())).expect("softmax is normalized")
    }
}

pub fn unary_from_probmap(p: &ProbMap) -> UnaryField {
    UnaryField {
        neg_log_probs: p.data().mapv(|v| -v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()),
    }
}

/// Position (mm) and normalized intensity of one voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feature {
    pub position: [f64; 3],
    pub intensity: f64,
}

pub fn pairwise_kernel(fi: &Feature, fj: &Feature, cfg: &CrfConfig) -> f64 {
    let d2: f64 = (0..3).map(|a| (fi.position[a] - fj.position[a]).powi(2)).sum();
    let di = fi.intensity - fj.intensity;
    let mut k = 0.0;
    if cfg.w_appearance > 0.0 {
        k += cfg.w_appearance
            * (-d2 / (2.0 * cfg.theta_alpha.powi(2)) - di * di / (2.0 * cfg.theta_beta.powi(2))).exp();
    }
    if cfg.w_smoothness > 0.0 {
        k += cfg.w_smoothness * (-d2 / (2.0 * cfg.theta_gamma.powi(2))).exp();
    }
    k
}

/// Intensities mapped linearly onto `[0, 1]` (all zero for a constant volume).
pub fn normalized_intensity(vol: &Volume) -> Array3<f64> {
    let (lo, hi) = vol.min_max();
    let range = hi - lo;
    if range > 0.0 {
        vol.data().mapv(|v| (v - lo) / range)
    } else {
        Array3::zeros(vol.data().raw_dim())
    }
}

/// Features of every voxel in `[x, y, z]` scan order.
pub fn features(vol: &Volume) -> Vec<Feature> {
    let sp = vol.spacing();
    let norm = normalized_intensity(vol);
    norm.indexed_iter()
        .map(|((x, y, z), &i)| Feature {
            position: [x as f64 * sp[0], y as f64 * sp[1], z as f64 * sp[2]],
            intensity: i,
        })
        .collect()
}

fn to_fields(a: &Array4<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|l| l.iter().copied().collect()).collect()
}

fn from_fields(fields: &[Vec<f64>], shape: [usize; 3]) -> Array4<f64> {
    let n: usize = shape.iter().product();
    let mut flat = Vec::with_capacity(fields.len() * n);
    for f in fields {
        flat.extend_from_slice(f);
    }
    Array4::from_shape_vec((fields.len(), shape[0], shape[1], shape[2]), flat).expect("sizes agree")
}

fn check_shapes(u_shape: [usize; 3], vol: &Volume) -> Result<()> {
    if u_shape != vol.shape() {
        return Err(Error::Shape(format!(
            "label field {u_shape:?} and volume {:?} differ in shape",
            vol.shape()
        )));
    }
    Ok(())
}

/// `E(x) = Σ ψ_u(x_i) + Σ_{i<j} [x_i ≠ x_j] k(f_i, f_j)`, evaluated exactly.
pub fn gibbs_energy(x: &LabelMask, u: &UnaryField, vol: &Volume, cfg: &CrfConfig) -> Result<f64> {
    check_shapes(x.shape(), vol)?;
    check_shapes(u.shape(), vol)?;
    let n = x.data().len();
    if n > EXACT_ENERGY_MAX_VOXELS {
        return Err(Error::Capacity(format!(
            "exact energy needs ≤ {EXACT_ENERGY_MAX_VOXELS} voxels, got {n}"
        )));
    }
    let labels: Vec<usize> = x.data().iter().map(|&v| v as usize).collect();
    if labels.iter().any(|&l| l >= u.labels()) {
        return Err(Error::Shape("labelling uses more labels than the unary field".into()));
    }
    let psi = to_fields(&u.neg_log_probs);
    let feats = features(vol);
    let mut e: f64 = labels.iter().enumerate().map(|(i, &l)| psi[l][i]).sum();
    if cfg.has_pairwise() {
        for i in 0..n {
            for j in i + 1..n {
                if labels[i] != labels[j] {
                    e += pairwise_kernel(&feats[i], &feats[j], cfg);
                }
            }
        }
    }
    Ok(e)
}

/// Marginals and the free energy after each step.
#[derive(Debug, Clone)]
pub struct MeanFieldState {
    pub q: ProbMap,
    pub free_energy_trace: Vec<f64>,
    /// Set once any trace entry came from the filtered approximation.
    pub trace_is_approximate: bool,
}

impl MeanFieldState {
    /// Initial state `softmax(−ψ_u)`.
    pub fn from_unary(u: &UnaryField) -> Self {
        Self {
            q: u.probabilities(),
            free_energy_trace: Vec::new(),
            trace_is_approximate: false,
        }
    }
}

/// Exact `Σ_{j≠i} k(f_i, f_j) q_j(l)` for every voxel and label.
pub fn brute_message_pass(q: &ProbMap, vol: &Volume, cfg: &CrfConfig) -> Result<Array4<f64>> {
    check_shapes(q.shape(), vol)?;
    let feats = features(vol);
    let qf = to_fields(q.data());
    Ok(from_fields(&brute_messages(&qf, &feats, cfg), q.shape()))
}

fn brute_messages(q: &[Vec<f64>], feats: &[Feature], cfg: &CrfConfig) -> Vec<Vec<f64>> {
    let n = feats.len();
    let nl = q.len();
    let per_voxel: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut m = vec![0.0; nl];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let k = pairwise_kernel(&feats[i], &feats[j], cfg);
                for (ml, ql) in m.iter_mut().zip(q) {
                    *ml += k * ql[j];
                }
            }
            m
        })
        .collect();
    (0..nl).map(|l| per_voxel.iter().map(|m| m[l]).collect()).collect()
}

/// Potts update of one voxel from its messages.
fn update_voxel(psi: &[Vec<f64>], msg: &[f64], i: usize, out: &mut [f64]) {
    let total: f64 = msg.iter().sum();
    let mut lo = f64::INFINITY;
    for l in 0..out.len() {
        out[l] = psi[l][i] + (total - msg[l]);
        lo = lo.min(out[l]);
    }
    let mut z = 0.0;
    for v in out.iter_mut() {
        *v = (lo - *v).exp();
        z += *v;
    }
    for v in out.iter_mut() {
        *v /= z;
    }
}

/// `Σ Qψ + ½ Σ_i Σ_l Q_i(l)(Σ_{l'≠l} M_i(l')) + Σ Q log Q` given messages `m`.
fn free_energy_from_messages(q: &[Vec<f64>], psi: &[Vec<f64>], m: &[Vec<f64>]) -> f64 {
    let n = q[0].len();
    let nl = q.len();
    let mut f = 0.0;
    for i in 0..n {
        let total: f64 = (0..nl).map(|l| m[l][i]).sum();
        for l in 0..nl {
            let qi = q[l][i];
            f += qi * psi[l][i] + 0.5 * qi * (total - m[l][i]);
            if qi > 0.0 {
                f += qi * qi.ln();
            }
        }
    }
    f
}

/// Exact variational free energy of the factorized distribution `q`.
pub fn variational_free_energy(q: &ProbMap, u: &UnaryField, vol: &Volume, cfg: &CrfConfig) -> Result<f64> {
    check_shapes(q.shape(), vol)?;
    check_shapes(u.shape(), vol)?;
    let qf = to_fields(q.data());
    let psi = to_fields(&u.neg_log_probs);
    let m = if cfg.has_pairwise() {
        brute_messages(&qf, &features(vol), cfg)
    } else {
        vec![vec![0.0; qf[0].len()]; qf.len()]
    };
    Ok(free_energy_from_messages(&qf, &psi, &m))
}

fn messages(q: &ProbMap, vol: &Volume, cfg: &CrfConfig, feats: &[Feature]) -> Result<Vec<Vec<f64>>> {
    if !cfg.has_pairwise() {
        return Ok(vec![vec![0.0; feats.len()]; q.labels()]);
    }
    match cfg.backend {
        CrfBackend::Brute => Ok(brute_messages(&to_fields(q.data()), feats, cfg)),
        CrfBackend::Filtered => Ok(to_fields(&filtered_message_pass(q, vol, cfg)?)),
    }
}

fn step_with_features(
    state: &MeanFieldState,
    u: &UnaryField,
    vol: &Volume,
    cfg: &CrfConfig,
    feats: &[Feature],
) -> Result<MeanFieldState> {
    let psi = to_fields(&u.neg_log_probs);
    let nl = psi.len();
    let n = feats.len();
    let mut q = to_fields(state.q.data());
    match cfg.update_order {
        UpdateOrder::Parallel => {
            let m = messages(&state.q, vol, cfg, feats)?;
            let mut buf = vec![0.0; nl];
            let mut msg = vec![0.0; nl];
            for i in 0..n {
                for l in 0..nl {
                    msg[l] = m[l][i];
                }
                update_voxel(&psi, &msg, i, &mut buf);
                for l in 0..nl {
                    q[l][i] = buf[l];
                }
            }
        }
        UpdateOrder::Sequential => {
            let mut buf = vec![0.0; nl];
            let mut msg = vec![0.0; nl];
            for i in 0..n {
                msg.fill(0.0);
                if cfg.has_pairwise() {
                    for j in 0..n {
                        if j != i {
                            let k = pairwise_kernel(&feats[i], &feats[j], cfg);
                            for l in 0..nl {
                                msg[l] += k * q[l][j];
                            }
                        }
                    }
                }
                update_voxel(&psi, &msg, i, &mut buf);
                for l in 0..nl {
                    q[l][i] = buf[l];
                }
            }
        }
    }
    let q_map = ProbMap::new(from_fields(&q, u.shape()))?;
    let m_new = messages(&q_map, vol, cfg, feats)?;
    let mut trace = state.free_energy_trace.clone();
    trace.push(free_energy_from_messages(&q, &psi, &m_new));
    Ok(MeanFieldState {
        q: q_map,
        free_energy_trace: trace,
        trace_is_approximate: state.trace_is_approximate
            || (cfg.backend == CrfBackend::Filtered && cfg.has_pairwise()),
    })
}

/// One mean-field sweep.
pub fn mean_field_step(state: &MeanFieldState, u: &UnaryField, vol: &Volume, cfg: &CrfConfig) -> Result<MeanFieldState> {
    cfg.validate()?;
    check_shapes(u.shape(), vol)?;
    check_shapes(state.q.shape(), vol)?;
    step_with_features(state, u, vol, cfg, &features(vol))
}

/// Mean-field refinement of a network probability map; returns the argmax
/// labelling (label 1 as foreground) and the final state.
pub fn refine(p: &ProbMap, vol: &Volume, cfg: &CrfConfig) -> Result<(LabelMask, MeanFieldState)> {
    cfg.validate()?;
    check_shapes(p.shape(), vol)?;
    if cfg.iterations == 0 {
        let state = MeanFieldState {
            q: p.clone(),
            free_energy_trace: Vec::new(),
            trace_is_approximate: false,
        };
        return Ok((p.argmax_mask(*vol.affine()), state));
    }
    let u = unary_from_probmap(p);
    let feats = features(vol);
    let mut state = MeanFieldState::from_unary(&u);
    for _ in 0..cfg.iterations {
        state = step_with_features(&state, &u, vol, cfg, &feats)?;
    }
    Ok((state.q.argmax_mask(*vol.affine()), state))
}
