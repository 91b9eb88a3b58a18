//! Gridded-field data model: canonical channels, window geometry, the C×H×W
//! field stack, resampling/blur/shift operators and the binary container.

mod channels;
mod geo;
mod grdio;
mod ops;
mod stack;

pub use channels::{ChannelId, NUM_CHANNELS};
pub use geo::{haversine_km, GeoWindow, EARTH_RADIUS_KM};
pub use grdio::{read_grd, write_grd};
pub use ops::{
    bilinear_resample, crop_window, gaussian_blur, sample_bilinear, shift_bilinear,
};
pub use stack::{CycloneFix, CycloneTrack, FieldStack, TrackPoint};

use thiserror::Error;

/// Errors raised by grid construction, geometry and container I/O.
#[derive(Debug, Error)]
pub enum GridError {
    #[error("unknown channel name {0:?}")]
    UnknownChannel(String),
    #[error("channel {0:?} not present in stack")]
    MissingChannel(ChannelId),
    #[error("shape mismatch for {what}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("non-finite value in channel {channel:?} at cell ({row}, {col})")]
    NonFinite {
        channel: ChannelId,
        row: usize,
        col: usize,
    },
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },
    #[error(
        "requested window of {requested_deg}° exceeds 4x the source extent of {source_deg}°"
    )]
    CropTooLarge { requested_deg: f64, source_deg: f64 },
    #[error("container format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GridError>;
