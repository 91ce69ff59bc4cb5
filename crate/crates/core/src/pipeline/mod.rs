//! Drivers behind the command-line front end: `synth`, `train`, `extract`,
//! `refine` and `eval`.

pub mod config;
pub mod eval;
pub mod extract;
pub mod synth;
pub mod train;

pub use config::{Settings, TrainParams};
pub use eval::{eval, evaluate_dirs, CaseMetrics, EvalOutput, EvalReport, Summary};
pub use extract::{extract, extract_volume, refine_files, ExtractOutput, Extraction, PipelineConfig, Sidecar};
pub use synth::{phantom, sphere_dataset, sphere_sample, synth, Phantom, SynthOutput};
pub use train::{
    evaluate_samples, load_dataset, normalize_intensity, predict, train, train_from, train_on_samples, Sample,
    TrainOutput, TrainReport,
};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "EVCSEG_THREADS";

/// Size the global worker pool from `EVCSEG_THREADS` (if set). Call once,
/// before any parallel work.
pub fn init_threads() -> crate::Result<Option<usize>> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| crate::Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
    // a pool that is already built keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(Some(n))
}
