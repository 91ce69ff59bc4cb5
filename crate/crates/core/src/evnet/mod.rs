//! Toy-scale EV-Net: a V-Net whose encoder levels also see the raw input,
//! downsampled to the level's resolution and concatenated onto the features.
//!
//! Everything runs in `f64` on the CPU with hand-written backward passes.
//! Tensors are `(batch, channels, d, h, w)`; a volume's `[x, y, z]` axes map
//! to `(d, h, w)`.

mod checkpoint;
mod loss;
mod model;
pub mod ops;
mod optim;
mod tensor;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub use checkpoint::{load_checkpoint, read_manifest, save_checkpoint, Manifest, TensorEntry, CHECKPOINT_MAGIC};
pub use loss::{masks_to_target, soft_dice_grad, soft_dice_loss, LossReport, SOFT_DICE_EPS};
pub use model::{
    backward, evnet_forward, forward_train, init_params, Block, DecoderLevel, EncoderLevel,
    ForwardCache, Params,
};
pub use ops::ConvParams;
pub use optim::{sgd_step, Sgd};
pub use tensor::Tensor5;

/// How the downsampled raw input joins the features at each encoder level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiscaleMode {
    /// Append the raw channel after the feature channels.
    Concat,
    /// Add the raw channel, tiled, onto every feature channel.
    Add,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvNetConfig {
    pub levels: usize,
    pub base_channels: usize,
    /// Convolutions in the block of each level (index = level).
    pub convs_per_block: Vec<usize>,
    pub multiscale_inputs: bool,
    pub multiscale_mode: MultiscaleMode,
    /// Edge length of the in-block convolution kernels (odd).
    pub kernel_size: usize,
    pub prelu_init: f64,
    pub seed: u64,
}

impl Default for EvNetConfig {
    /// Desk-scale network: 3 levels, 4 base channels, 3³ kernels.
    fn default() -> Self {
        Self {
            levels: 3,
            base_channels: 4,
            convs_per_block: vec![1, 2, 2],
            multiscale_inputs: true,
            multiscale_mode: MultiscaleMode::Concat,
            kernel_size: 3,
            prelu_init: 0.25,
            seed: 0,
        }
    }
}

impl EvNetConfig {
    /// The original V-Net layout: five levels, 16 base channels, 5³ kernels.
    pub fn vnet_layout() -> Self {
        Self {
            levels: 5,
            base_channels: 16,
            convs_per_block: vec![1, 2, 3, 3, 3],
            kernel_size: 5,
            ..Self::default()
        }
    }

    /// Small two-level network used for quick experiments and tests.
    pub fn toy() -> Self {
        Self {
            levels: 2,
            base_channels: 4,
            convs_per_block: vec![1, 1],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=5).contains(&self.levels) {
            return Err(Error::Config(format!("levels must be in 2..=5, got {}", self.levels)));
        }
        if self.base_channels < 2 {
            return Err(Error::Config("base_channels must be at least 2".into()));
        }
        if self.convs_per_block.len() != self.levels {
            return Err(Error::Config(format!(
                "convs_per_block has {} entries for {} levels",
                self.convs_per_block.len(),
                self.levels
            )));
        }
        if self.convs_per_block.contains(&0) {
            return Err(Error::Config("every block needs at least one convolution".into()));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::Config("kernel_size must be odd".into()));
        }
        if !self.prelu_init.is_finite() {
            return Err(Error::Config("prelu_init must be finite".into()));
        }
        Ok(())
    }

    /// Feature channels at `level`.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Input edge lengths must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }

    /// Hash of the fields that determine the parameter layout.
    /// Seed and PReLU initial slope only affect initialization and are left out.
    pub fn layout_hash(&self) -> String {
        let key = serde_json::json!({
            "levels": self.levels,
            "base_channels": self.base_channels,
            "convs_per_block": self.convs_per_block,
            "multiscale_inputs": self.multiscale_inputs,
            "multiscale_mode": self.multiscale_mode,
            "kernel_size": self.kernel_size,
        });
        let digest = Sha256::digest(key.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Same config with the raw-input branch switched off.
    pub fn plain(&self) -> Self {
        Self {
            multiscale_inputs: false,
            ..self.clone()
        }
    }
}
