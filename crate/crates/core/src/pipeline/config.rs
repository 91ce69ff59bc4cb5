//! Settings files: flat `key = value` lines or JSON (flat dotted keys or
//! nested objects). Command-line flags are applied on top.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::AugmentConfig;
use crate::crf::{CrfBackend, CrfConfig, UpdateOrder};
use crate::evnet::{EvNetConfig, MultiscaleMode};
use crate::volume::GridTarget;
use crate::{Error, Result};

/// Optimisation settings for `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Seed for shuffling and the validation split.
    pub seed: u64,
    /// Fraction of the dataset held out for validation (best-checkpoint selection).
    pub val_fraction: f64,
    pub augment: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 2,
            lr: 0.03,
            momentum: 0.9,
            seed: 0,
            val_fraction: 0.2,
            augment: true,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("train.val_fraction must lie in [0, 1)".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("train.lr must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("train.momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Everything a settings file can set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub evnet: EvNetConfig,
    /// Whether any `evnet.*` key was given (extract then checks it against the checkpoint).
    pub evnet_given: bool,
    pub crf: CrfConfig,
    pub aug: AugmentConfig,
    pub train: TrainParams,
    pub grid: GridTarget,
    pub cleanup: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            evnet: EvNetConfig::default(),
            evnet_given: false,
            crf: CrfConfig::default(),
            aug: AugmentConfig::default(),
            train: TrainParams::default(),
            grid: GridTarget::default(),
            cleanup: true,
        }
    }
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut s = Self::default();
        s.apply(&parse_pairs(&text)?)?;
        Ok(s)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = Self::default();
        s.apply(&parse_pairs(text)?)?;
        Ok(s)
    }

    pub fn apply(&mut self, pairs: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Set one dotted key from its string form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        if key.starts_with("evnet.") {
            self.evnet_given = true;
        }
        match key {
            "evnet.levels" => self.evnet.levels = num(key, v)?,
            "evnet.base_channels" => self.evnet.base_channels = num(key, v)?,
            "evnet.convs_per_block" => self.evnet.convs_per_block = list(key, v)?,
            "evnet.multiscale_inputs" => self.evnet.multiscale_inputs = boolean(key, v)?,
            "evnet.multiscale_mode" => {
                self.evnet.multiscale_mode = match v {
                    "concat" => MultiscaleMode::Concat,
                    "add" => MultiscaleMode::Add,
                    _ => return Err(bad(key, v)),
                }
            }
            "evnet.kernel_size" => self.evnet.kernel_size = num(key, v)?,
            "evnet.prelu_init" => self.evnet.prelu_init = num(key, v)?,
            "evnet.seed" => self.evnet.seed = num(key, v)?,
            "crf.iterations" | "crf.iters" => self.crf.iterations = num(key, v)?,
            "crf.w_app" | "crf.w_appearance" => self.crf.w_appearance = num(key, v)?,
            "crf.w_smooth" | "crf.w_smoothness" => self.crf.w_smoothness = num(key, v)?,
            "crf.theta_alpha" => self.crf.theta_alpha = num(key, v)?,
            "crf.theta_beta" => self.crf.theta_beta = num(key, v)?,
            "crf.theta_gamma" => self.crf.theta_gamma = num(key, v)?,
            "crf.backend" => self.crf.backend = v.parse::<CrfBackend>()?,
            "crf.update_order" => {
                self.crf.update_order = match v {
                    "parallel" => UpdateOrder::Parallel,
                    "sequential" => UpdateOrder::Sequential,
                    _ => return Err(bad(key, v)),
                }
            }
            "aug.scale" => self.aug.scale = pair(key, v)?,
            "aug.shift" => self.aug.shift = pair(key, v)?,
            "aug.rot_deg" => self.aug.rot_deg = num(key, v)?,
            "aug.trans_vox" => self.aug.trans_vox = num(key, v)?,
            "aug.seed" => self.aug.seed = num(key, v)?,
            "train.epochs" => self.train.epochs = num(key, v)?,
            "train.batch_size" => self.train.batch_size = num(key, v)?,
            "train.lr" => self.train.lr = num(key, v)?,
            "train.momentum" => self.train.momentum = num(key, v)?,
            "train.seed" => self.train.seed = num(key, v)?,
            "train.val_fraction" => self.train.val_fraction = num(key, v)?,
            "train.augment" => self.train.augment = boolean(key, v)?,
            "grid.spacing_mm" => self.grid.spacing_mm = num(key, v)?,
            "grid.pad" => {
                let p: Vec<usize> = list(key, v)?;
                self.grid.pad = match p[..] {
                    [n] => [n; 3],
                    [a, b, c] => [a, b, c],
                    _ => return Err(bad(key, v)),
                };
            }
            "cleanup" => self.cleanup = boolean(key, v)?,
            _ => return Err(Error::Config(format!("unknown setting '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.evnet.validate()?;
        self.crf.validate()?;
        self.aug.validate()?;
        self.train.validate()?;
        check_grid(&self.grid, &self.evnet)
    }
}

/// The network grid (half the padded grid) must be divisible by `2^(levels−1)`.
pub fn check_grid(grid: &GridTarget, evnet: &EvNetConfig) -> Result<()> {
    if !(grid.spacing_mm > 0.0 && grid.spacing_mm.is_finite()) {
        return Err(Error::Config("grid.spacing_mm must be positive".into()));
    }
    let m = 2 * evnet.size_multiple();
    if grid.pad.iter().any(|&p| p == 0 || p % m != 0) {
        return Err(Error::Config(format!(
            "pad shape {:?} must be a positive multiple of {m} for a {}-level network",
            grid.pad, evnet.levels
        )));
    }
    Ok(())
}

fn bad(key: &str, v: &str) -> Error {
    Error::Config(format!("invalid value '{v}' for {key}"))
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, v))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(bad(key, v)),
    }
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    let items: Result<Vec<T>> = v
        .trim_matches(|c| c == '[' || c == ']')
        .split(',')
        .map(|s| num(key, s.trim()))
        .collect();
    let items = items?;
    if items.is_empty() {
        return Err(bad(key, v));
    }
    Ok(items)
}

fn pair(key: &str, v: &str) -> Result<[f64; 2]> {
    match list::<f64>(key, v)?[..] {
        [a, b] => Ok([a, b]),
        _ => Err(bad(key, v)),
    }
}

/// Parse settings text into dotted key/value strings.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    if text.trim_start().starts_with('{') {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("settings JSON: {e}")))?;
        flatten("", &v, &mut out)?;
        return Ok(out);
    }
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("settings line {}: expected key = value", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().trim_matches('"').to_string());
    }
    Ok(out)
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, String>) -> Result<()> {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out)?;
            }
        }
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(scalar).collect::<Result<_>>()?;
            out.insert(prefix.to_string(), parts.join(","));
        }
        _ => {
            out.insert(prefix.to_string(), scalar(v)?);
        }
    }
    Ok(())
}

fn scalar(v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => Err(Error::Config(format!("unsupported settings value {v}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_value_and_json_agree() {
        let kv = "# comment\ncrf.w_app = 2.5\nevnet.convs_per_block = 1,2\nevnet.levels=2\naug.scale = 0.8, 1.2\ngrid.pad = 32\n";
        let json = r#"{"crf": {"w_app": 2.5}, "evnet": {"convs_per_block": [1, 2], "levels": 2}, "aug.scale": [0.8, 1.2], "grid": {"pad": 32}}"#;
        let a = Settings::from_text(kv).unwrap();
        let b = Settings::from_text(json).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.crf.w_appearance, 2.5);
        assert_eq!(a.evnet.convs_per_block, vec![1, 2]);
        assert_eq!(a.grid.pad, [32; 3]);
        assert!(a.evnet_given);
        assert!(a.validate().is_ok());
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!(Settings::from_text("nope = 1"), Err(Error::Config(_))));
        assert!(matches!(Settings::from_text("crf.w_app = x"), Err(Error::Config(_))));
        assert!(matches!(Settings::from_text("no equals sign"), Err(Error::Config(_))));
    }

    #[test]
    fn grid_must_suit_levels() {
        let mut s = Settings::default();
        s.grid.pad = [36; 3];
        assert!(s.validate().is_err());
        s.grid.pad = [40; 3];
        s.evnet = EvNetConfig::toy();
        s.evnet.levels = 2;
        assert!(s.validate().is_ok());
    }
}
