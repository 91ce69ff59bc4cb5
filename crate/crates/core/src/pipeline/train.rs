//! Toy-scale training: shuffled minibatches, augmentation, soft-Dice loss and
//! momentum SGD, with a per-epoch JSONL log and best-loss checkpointing.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{check_grid, Settings, TrainParams};
use crate::augment::{augment_pair, AugmentConfig};
use crate::evnet::{
    backward, evnet_forward, forward_train, init_params, masks_to_target, save_checkpoint, soft_dice_grad,
    soft_dice_loss, EvNetConfig, Params, Sgd, Tensor5,
};
use crate::metrics::dice;
use crate::nifti::{read_mask, read_nifti};
use crate::volume::{preprocess, preprocess_mask, GridTarget};
use crate::{Error, LabelMask, ProbMap, Result, Volume};

/// Upper clamp after percentile scaling.
pub const NORMALIZATION_CLAMP: f64 = 1.5;
pub const NORMALIZATION_PERCENTILE: f64 = 0.99;

/// Nearest-rank percentile, `q` in [0, 1].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    let k = ((v.len() - 1) as f64 * q).round() as usize;
    let (_, x, _) = v.select_nth_unstable_by(k, f64::total_cmp);
    *x
}

/// Divide by the 99th-percentile intensity and clamp to `[0, 1.5]`.
/// Returns the normalized volume and the divisor used.
pub fn normalize_intensity(v: &Volume) -> Result<(Volume, f64)> {
    let flat: Vec<f64> = v.data().iter().copied().collect();
    let mut scale = percentile(&flat, NORMALIZATION_PERCENTILE);
    if scale <= 0.0 {
        scale = flat.iter().copied().fold(0.0, f64::max);
    }
    if scale <= 0.0 {
        scale = 1.0;
    }
    let out = v.with_data(v.data().mapv(|x| (x / scale).clamp(0.0, NORMALIZATION_CLAMP)))?;
    Ok((out, scale))
}

/// Network-grid image (normalized) and mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Volume,
    pub mask: LabelMask,
}

impl Sample {
    /// Normalize an image already on the network grid.
    pub fn from_grid(image: &Volume, mask: LabelMask) -> Result<Self> {
        if image.shape() != mask.shape() {
            return Err(Error::Data(format!(
                "image {:?} and mask {:?} differ in shape",
                image.shape(),
                mask.shape()
            )));
        }
        Ok(Self {
            image: normalize_intensity(image)?.0,
            mask,
        })
    }

    /// Map a native-space pair onto the network grid.
    pub fn from_native(image: &Volume, mask: &LabelMask, grid: &GridTarget) -> Result<Self> {
        if image.shape() != mask.shape() || (image.affine() - mask.affine()).abs().max() > 1e-6 {
            return Err(Error::Data("image and mask grids differ".into()));
        }
        let (img, prov) = preprocess(image, grid)?;
        let m = preprocess_mask(mask, &prov)?;
        Self::from_grid(&img, m)
    }
}

fn image_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(dir, e))?;
        let name = e.file_name().to_string_lossy().into_owned();
        if name.ends_with(".nii") || name.ends_with(".nii.gz") {
            out.insert(name, e.path());
        }
    }
    Ok(out)
}

/// Pair files with the same name in two directories. Any name present in only
/// one of them is a data error.
pub fn match_files(a: &Path, b: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let fa = image_files(a)?;
    let fb = image_files(b)?;
    let only_a: Vec<&str> = fa.keys().filter(|k| !fb.contains_key(*k)).map(String::as_str).collect();
    let only_b: Vec<&str> = fb.keys().filter(|k| !fa.contains_key(*k)).map(String::as_str).collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(Error::Data(format!(
            "unmatched files: only in {}: {only_a:?}; only in {}: {only_b:?}",
            a.display(),
            b.display()
        )));
    }
    Ok(fa
        .into_iter()
        .map(|(k, pa)| {
            let pb = fb[&k].clone();
            (k, pa, pb)
        })
        .collect())
}

/// Load `dir/images/*` with `dir/masks/*` onto the network grid.
pub fn load_dataset(dir: &Path, grid: &GridTarget) -> Result<Vec<(String, Sample)>> {
    let pairs = match_files(&dir.join("images"), &dir.join("masks"))?;
    if pairs.is_empty() {
        return Err(Error::Data(format!("no image/mask pairs under {}", dir.display())));
    }
    pairs
        .into_iter()
        .map(|(name, ip, mp)| {
            let load = || -> Result<Sample> {
                let img = read_nifti(&ip)?;
                let mask = read_mask(&mp)?;
                Sample::from_native(&img, &mask, grid)
            };
            load()
                .map(|s| (name.clone(), s))
                .map_err(|e| Error::Data(format!("pair {} / {}: {e}", ip.display(), mp.display())))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_dice: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Parameters after the last epoch.
    pub params: Params,
    /// Parameters of the epoch with the lowest selection loss (validation if
    /// available, else training); the initialization when no epoch ran.
    pub best_params: Params,
    pub best_epoch: Option<usize>,
    pub epochs: Vec<EpochLog>,
    /// Loss of every optimisation step in order.
    pub step_losses: Vec<f64>,
}

fn stack_inputs(items: &[&Volume]) -> Result<Tensor5> {
    let t: Vec<Tensor5> = items.iter().map(|v| Tensor5::from_array3(v.data())).collect();
    Tensor5::stack(&t)
}

/// Foreground probability map of one normalized network-grid image.
pub fn predict(params: &Params, cfg: &EvNetConfig, image: &Volume) -> Result<ProbMap> {
    let out = evnet_forward(&stack_inputs(&[image])?, params, cfg)?;
    let labels = out.channels();
    let shape = out.spatial();
    let mut data = ndarray::Array4::zeros((labels, shape[0], shape[1], shape[2]));
    for l in 0..labels {
        data.index_axis_mut(ndarray::Axis(0), l).assign(&out.to_array3(0, l));
    }
    ProbMap::new(data)
}

/// Mean soft-Dice loss and mean hard Dice (argmax) over `samples`.
pub fn evaluate_samples(params: &Params, cfg: &EvNetConfig, samples: &[Sample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let mut loss = 0.0;
    let mut d = 0.0;
    for s in samples {
        let out = evnet_forward(&stack_inputs(&[&s.image])?, params, cfg)?;
        loss += soft_dice_loss(&out, &masks_to_target(std::slice::from_ref(&s.mask))?)?.value;
        let fg = out.to_array3(0, 1);
        let pred = LabelMask::new(fg.mapv(|p| (p > 0.5) as u8), *s.mask.affine())?;
        d += dice(&s.mask, &pred)?;
    }
    let n = samples.len() as f64;
    Ok((loss / n, d / n))
}

/// Train from initialization on in-memory network-grid samples.
pub fn train_on_samples(
    train: &[Sample],
    val: &[Sample],
    cfg: &EvNetConfig,
    tp: &TrainParams,
    aug: &AugmentConfig,
) -> Result<TrainReport> {
    train_from(init_params(cfg)?, train, val, cfg, tp, aug)
}

/// Continue training `params`.
pub fn train_from(
    mut params: Params,
    train: &[Sample],
    val: &[Sample],
    cfg: &EvNetConfig,
    tp: &TrainParams,
    aug: &AugmentConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    tp.validate()?;
    if tp.augment {
        aug.validate()?;
    }
    if train.is_empty() && tp.epochs > 0 {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut sgd = Sgd::new(tp.lr, tp.momentum)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tp.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best_params = params.clone();
    let mut best: Option<(usize, f64)> = None;
    let mut epochs = Vec::with_capacity(tp.epochs);
    let mut step_losses = Vec::new();

    for epoch in 1..=tp.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(tp.batch_size) {
            let mut images = Vec::with_capacity(batch.len());
            let mut masks = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &train[i];
                if tp.augment {
                    let index = ((epoch - 1) * train.len() + i) as u64;
                    let (img, m) = augment_pair(&s.image, &s.mask, aug, index)?;
                    images.push(img);
                    masks.push(m);
                } else {
                    images.push(s.image.clone());
                    masks.push(s.mask.clone());
                }
            }
            let x = stack_inputs(&images.iter().collect::<Vec<_>>())?;
            let target = masks_to_target(&masks)?;
            let cache = forward_train(&x, &params, cfg)?;
            let loss = soft_dice_loss(cache.output(), &target)?.value;
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
            }
            let g = soft_dice_grad(cache.output(), &target)?;
            let grads = backward(&cache, &params, cfg, &g)?;
            sgd.step(&mut params, &grads)?;
            step_losses.push(loss);
            epoch_loss += loss * batch.len() as f64;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let (val_loss, val_dice) = if val.is_empty() {
            (None, None)
        } else {
            let (l, d) = evaluate_samples(&params, cfg, val)?;
            (Some(l), Some(d))
        };
        let select = val_loss.unwrap_or(train_loss);
        if best.is_none_or(|(_, b)| select < b) {
            best = Some((epoch, select));
            best_params = params.clone();
        }
        log::info!("epoch {epoch}: train {train_loss:.4} val {val_loss:?}");
        epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            val_dice,
        });
    }
    Ok(TrainReport {
        params,
        best_params,
        best_epoch: best.map(|(e, _)| e),
        epochs,
        step_losses,
    })
}

/// Split indices `0..n` into (train, val) with a seeded shuffle.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n.saturating_sub(1));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Outputs of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub report: TrainReport,
}

/// Train on `data_dir/{images,masks}` and write the best checkpoint plus a
/// JSON-lines loss log (one line per epoch; empty for zero epochs).
pub fn train(data_dir: &Path, checkpoint: &Path, log_path: Option<&Path>, settings: &Settings) -> Result<TrainOutput> {
    settings.evnet.validate()?;
    settings.train.validate()?;
    check_grid(&settings.grid, &settings.evnet)?;
    let data = load_dataset(data_dir, &settings.grid)?;
    let samples: Vec<Sample> = data.into_iter().map(|(_, s)| s).collect();
    let (ti, vi) = split_indices(samples.len(), settings.train.val_fraction, settings.train.seed);
    let train_set: Vec<Sample> = ti.iter().map(|&i| samples[i].clone()).collect();
    let val_set: Vec<Sample> = vi.iter().map(|&i| samples[i].clone()).collect();
    let report = train_on_samples(&train_set, &val_set, &settings.evnet, &settings.train, &settings.aug)
        .map_err(|e| e.in_stage("train"))?;
    if let Some(dir) = checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_checkpoint(&report.best_params, &settings.evnet, checkpoint)?;
    let log = log_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| checkpoint.with_extension("log.jsonl"));
    let mut f = std::fs::File::create(&log).map_err(|e| Error::io(&log, e))?;
    for e in &report.epochs {
        writeln!(f, "{}", serde_json::to_string(e)?).map_err(|err| Error::io(&log, err))?;
    }
    Ok(TrainOutput {
        checkpoint: checkpoint.to_path_buf(),
        log,
        report,
    })
}
