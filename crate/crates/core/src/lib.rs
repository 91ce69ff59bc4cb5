//! Brain extraction for 3D MRI volumes.
//!
//! The stack mirrors a classical skull-stripping pipeline:
//!
//! - [`volume`]: voxel grids with voxel-to-world affines, RAS+ reorientation,
//!   isotropic resampling, padding, half-resolution resizing and the inverse
//!   mapping back to the native grid.
//! - [`nifti`]: NIfTI-1 reader/writer (plain and gzip) and a raw test format.
//! - [`evnet`]: a V-Net with multi-scale raw inputs concatenated at every
//!   encoder level, with hand-written forward and backward passes.
//! - [`crf`]: fully connected CRF refinement by mean-field inference, with an
//!   exact O(N²) backend and a filtered (Gaussian blur + bilateral grid) backend.
//! - [`postproc`]: hole filling and largest-component selection.
//! - [`metrics`]: Dice, Jaccard, exact EDT and balanced average Hausdorff distance.
//! - [`augment`]: intensity and rigid augmentation.
//! - [`pipeline`]: `synth`, `train`, `extract`, `refine` and `eval` drivers.
//!
//! Runnable walkthroughs for each capability live in `examples/`.

pub mod augment;
pub mod crf;
mod error;
pub mod evnet;
pub mod metrics;
pub mod nifti;
pub mod pipeline;
pub mod postproc;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Affine, LabelMask, ProbMap, Volume};
