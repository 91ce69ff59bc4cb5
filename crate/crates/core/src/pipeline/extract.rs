//! `extract` (full chain) and `refine` (CRF only).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::check_grid;
use super::train::{normalize_intensity, predict, NORMALIZATION_CLAMP};
use crate::crf::{self, CrfConfig};
use crate::evnet::{load_checkpoint, EvNetConfig, Params};
use crate::nifti::{read_nifti, read_probmap, write_nifti, write_probmap};
use crate::postproc::cleanup;
use crate::volume::{mask_to_native, preprocess, GridTarget, Provenance};
use crate::{Error, LabelMask, ProbMap, Result, Volume};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    pub checkpoint: PathBuf,
    /// Expected network layout; `None` accepts whatever the checkpoint holds.
    pub evnet: Option<EvNetConfig>,
    pub crf: CrfConfig,
    pub cleanup: bool,
    pub grid: GridTarget,
    /// Defaults to the output path with `.json` appended.
    pub sidecar: Option<PathBuf>,
    /// Optional network-grid probability map output.
    pub probs_out: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn new(input: impl Into<PathBuf>, output: impl Into<PathBuf>, checkpoint: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            output: output.into(),
            checkpoint: checkpoint.into(),
            evnet: None,
            crf: CrfConfig::default(),
            cleanup: true,
            grid: GridTarget::default(),
            sidecar: None,
            probs_out: None,
        }
    }

    pub fn sidecar_path(&self) -> PathBuf {
        self.sidecar.clone().unwrap_or_else(|| {
            let mut s = self.output.clone().into_os_string();
            s.push(".json");
            s.into()
        })
    }
}

/// Everything applied during one extraction; enough to replay
/// `mask_to_native` from a network-grid mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub input: PathBuf,
    pub output: PathBuf,
    pub checkpoint: PathBuf,
    pub config_hash: String,
    pub evnet: EvNetConfig,
    pub crf: CrfConfig,
    pub cleanup: bool,
    pub grid: GridTarget,
    pub normalization_scale: f64,
    pub normalization_clamp: f64,
    pub provenance: Provenance,
    pub crf_free_energy: Vec<f64>,
    pub crf_free_energy_approximate: bool,
    pub cleanup_warning: Option<String>,
    pub foreground_voxels: usize,
}

/// In-memory result of the chain.
#[derive(Debug, Clone)]
pub struct Extraction {
    /// Native-grid mask.
    pub mask: LabelMask,
    /// Network-grid mask after CRF and cleanup.
    pub grid_mask: LabelMask,
    /// Network-grid probabilities.
    pub probs: ProbMap,
    pub provenance: Provenance,
    pub normalization_scale: f64,
    pub crf_state: crf::MeanFieldState,
    pub cleanup_warning: Option<String>,
}

/// Run preprocessing, the network, CRF, cleanup and the inverse mapping on
/// an image already in memory.
pub fn extract_volume(
    image: &Volume,
    params: &Params,
    evnet: &EvNetConfig,
    crf_cfg: &CrfConfig,
    do_cleanup: bool,
    grid: &GridTarget,
) -> Result<Extraction> {
    check_grid(grid, evnet)?;
    crf_cfg.validate()?;
    let (grid_vol, provenance) = preprocess(image, grid).map_err(|e| e.in_stage("preprocess"))?;
    let (input, scale) = normalize_intensity(&grid_vol).map_err(|e| e.in_stage("normalize"))?;
    let probs = predict(params, evnet, &input).map_err(|e| e.in_stage("network"))?;
    let (refined, crf_state) = crf::refine(&probs, &grid_vol, crf_cfg).map_err(|e| e.in_stage("crf"))?;
    let (grid_mask, cleanup_warning) = if do_cleanup {
        let c = cleanup(&refined);
        (c.mask, c.warning.map(|w| format!("{w:?}")))
    } else {
        (refined, None)
    };
    let mask = mask_to_native(&grid_mask, image, &provenance).map_err(|e| e.in_stage("to-native"))?;
    Ok(Extraction {
        mask,
        grid_mask,
        probs,
        provenance,
        normalization_scale: scale,
        crf_state,
        cleanup_warning,
    })
}

#[derive(Debug, Clone)]
pub struct ExtractOutput {
    pub extraction: Extraction,
    pub sidecar: Sidecar,
    pub sidecar_path: PathBuf,
}

/// Full chain from files: read, extract, write the mask, the sidecar and
/// optionally the probability map.
pub fn extract(cfg: &PipelineConfig) -> Result<ExtractOutput> {
    let (params, evnet) = load_checkpoint(&cfg.checkpoint, cfg.evnet.as_ref()).map_err(|e| e.in_stage("checkpoint"))?;
    let image = read_nifti(&cfg.input).map_err(|e| e.in_stage("read"))?;
    let ex = extract_volume(&image, &params, &evnet, &cfg.crf, cfg.cleanup, &cfg.grid)?;
    write_nifti(&ex.mask, &cfg.output).map_err(|e| e.in_stage("write"))?;
    if let Some(p) = &cfg.probs_out {
        write_probmap(&ex.probs, &crate::volume::affine_from_rows(&ex.provenance.resized_affine), p)
            .map_err(|e| e.in_stage("write"))?;
    }
    let sidecar = Sidecar {
        input: cfg.input.clone(),
        output: cfg.output.clone(),
        checkpoint: cfg.checkpoint.clone(),
        config_hash: evnet.layout_hash(),
        evnet,
        crf: cfg.crf.clone(),
        cleanup: cfg.cleanup,
        grid: cfg.grid,
        normalization_scale: ex.normalization_scale,
        normalization_clamp: NORMALIZATION_CLAMP,
        provenance: ex.provenance.clone(),
        crf_free_energy: ex.crf_state.free_energy_trace.clone(),
        crf_free_energy_approximate: ex.crf_state.trace_is_approximate,
        cleanup_warning: ex.cleanup_warning.clone(),
        foreground_voxels: ex.mask.count(),
    };
    let sidecar_path = cfg.sidecar_path();
    std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&sidecar_path, e))?;
    Ok(ExtractOutput {
        extraction: ex,
        sidecar,
        sidecar_path,
    })
}

/// CRF refinement of a stored probability map against its image, optionally
/// followed by cleanup.
pub fn refine_files(probs: &Path, image: &Path, output: &Path, crf_cfg: &CrfConfig, do_cleanup: bool) -> Result<LabelMask> {
    let (p, _) = read_probmap(probs)?;
    let vol = read_nifti(image)?;
    if vol.shape() != p.shape() {
        return Err(Error::Data(format!(
            "probability map {:?} and image {:?} differ in shape",
            p.shape(),
            vol.shape()
        )));
    }
    let (mask, _) = crf::refine(&p, &vol, crf_cfg).map_err(|e| e.in_stage("crf"))?;
    let mask = if do_cleanup { cleanup(&mask).mask } else { mask };
    write_nifti(&mask, output)?;
    Ok(mask)
}
