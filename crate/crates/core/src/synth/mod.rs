//! Synthetic paired datasets: parametric vortex truth fields, smoothed
//! clean inputs (reanalysis analog) and lead-time-degraded forecast inputs
//! (global-forecast analog), with exact centers and intensities on record.

mod dataset;
mod degrade;
mod holland;
mod render;

pub use dataset::{
    dataset_meta_path, draw_scene, gen_dataset, load_sample, sample_dir, sample_seed,
    DatasetMeta, GenConfig, SampleData, SampleMeta, SceneDraw,
};
pub use degrade::{degrade_clean, degrade_forecast, DegradeSpec};
pub use holland::{holland_pressure, holland_wind, HollandParams};
pub use render::{render_vortex, AsymmetrySpec, Harmonic};

use crate::grid::GridError;
use thiserror::Error;

/// SplitMix64 finalizer, the splittable mixing function behind every
/// derived seed in this module: statistically independent outputs for
/// distinct inputs, so derived streams never depend on generation order.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Errors raised by vortex synthesis and dataset generation.
#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("metadata error for {path}: {why}")]
    Meta { path: String, why: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;
