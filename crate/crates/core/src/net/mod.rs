//! Conditional velocity estimator: a three-level encoder-decoder with skip
//! connections, bottleneck self-attention, sinusoidal time/lead conditioning,
//! and exact hand-written reverse-mode gradients.
//!
//! The network is generic over the element type: `f32` for training, `f64`
//! for finite-difference gradient verification.

mod attention;
mod checkpoint;
mod embed;
mod gradcheck;
mod kernels;
mod params;
mod unet;

pub use checkpoint::{fnv1a64, load_checkpoint, read_checkpoint_meta, save_checkpoint};
pub use embed::embed_time_raw;
pub use gradcheck::{grad_check, grad_check_fn};
pub use params::{init_params, manifest, param_count, validate_params, ParamSet};
pub use unet::{backward, batch_loss, forward, forward_traced, loss_and_grads, Batch, Tape};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from network construction, evaluation, and checkpoint I/O.
#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid net config: {why}")]
    Config { why: String },
    #[error("missing parameter tensor {0}")]
    MissingTensor(String),
    #[error("unexpected parameter tensor {0}")]
    UnknownTensor(String),
    #[error("tensor {name}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("non-finite loss at batch index {index}")]
    NonFiniteLoss { index: usize },
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NetError>;

/// Element type the network runs in: `f32` for training, `f64` for
/// gradient checking.
pub trait Real:
    num_traits::Float
    + num_traits::NumAssignOps
    + num_traits::FromPrimitive
    + ndarray::ScalarOperand
    + ndarray::LinalgScalar
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Architecture hyperparameters; the parameter manifest is a pure function
/// of this struct.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub levels: usize,
    pub attn_at_bottleneck: bool,
    pub embed_dim: usize,
    pub h: usize,
    pub w: usize,
}

impl NetConfig {
    /// Full-width configuration for an `h` x `w` window.
    pub fn desk(h: usize, w: usize) -> Self {
        NetConfig {
            in_channels: 42,
            out_channels: 21,
            base_width: 16,
            levels: 3,
            attn_at_bottleneck: true,
            embed_dim: 64,
            h,
            w,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |why: String| Err(NetError::Config { why });
        if self.in_channels != 2 * self.out_channels {
            return fail(format!(
                "in_channels {} must be 2x out_channels {}",
                self.in_channels, self.out_channels
            ));
        }
        if self.out_channels == 0 || self.base_width == 0 {
            return fail("zero channel width".into());
        }
        if self.levels > 6 {
            return fail(format!("levels {} > 6", self.levels));
        }
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return fail(format!("embed_dim {} must be even", self.embed_dim));
        }
        let div = 1usize << self.levels;
        if self.h == 0 || self.w == 0 || self.h % div != 0 || self.w % div != 0 {
            return fail(format!(
                "grid {}x{} not divisible by 2^levels = {div}",
                self.h, self.w
            ));
        }
        Ok(())
    }

    /// Channel width of encoder/decoder level `l`.
    pub fn width(&self, l: usize) -> usize {
        self.base_width << l
    }

    /// Channel width (= feature-vector length) at the bottleneck.
    pub fn bottleneck_width(&self) -> usize {
        self.base_width << self.levels
    }
}
