//! Rectified-flow path construction, the conditional flow-matching loss,
//! and the deterministic ODE samplers mapping noise to reconstructions.

mod normalize;
mod path;
mod sampler;

pub use normalize::{fit_normalizer, Normalizer};
pub use path::{cfm_loss, gaussian_noise, interpolate_path, FlowSample, VelocityField};
pub use sampler::{integrate, sample, NetVelocity, SamplerMethod};

use thiserror::Error;

/// Errors from path construction, loss evaluation, and sampling.
#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid flow input: {what}: {why}")]
    Invalid { what: &'static str, why: String },
    #[error("zero variance in channel {0}, cannot normalize")]
    ZeroVariance(String),
    #[error("non-finite state after sampler step {step}")]
    NonFiniteState { step: usize },
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error(transparent)]
    Net(#[from] crate::net::NetError),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
}

pub type Result<T> = std::result::Result<T, FlowError>;
