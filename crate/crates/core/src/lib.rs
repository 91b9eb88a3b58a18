//! Vortex-following reconstruction of tropical-cyclone fields.
//!
//! The crate turns coarse, displaced forecast fields of a tropical cyclone
//! into high-resolution storm-centred reconstructions.  A conditional
//! rectified-flow model maps Gaussian noise to the target fields while being
//! conditioned on a degraded input and the forecast lead time; training runs
//! in two stages (clean-condition pretraining, then fine-tuning on forecast
//! conditions with a latent-feature alignment penalty).
//!
//! Module map:
//! - [`grid`]: storm-centred lat/lon windows, the 21-channel field stack,
//!   resampling/blur/shift operators and the on-disk field container.
//! - [`synth`]: parametric vortex scenes and their degraded counterparts,
//!   used to build reproducible datasets.
//! - [`net`]: the convolutional velocity estimator with hand-written
//!   reverse-mode gradients and a finite-difference gradient checker.
//! - [`flow`]: rectified-flow interpolation, the training objective and the
//!   deterministic ODE samplers.
//! - [`train`]: Adam, the kernel two-sample penalty and the two training
//!   stages.
//! - [`tracker`]: minimum-pressure centre fixing and vortex following.
//! - [`diag`]: azimuthal structure, radial profiles, spectra and histograms.
//! - [`verify`]: gridded and track verification scores and run reports.

pub mod diag;
pub mod flow;
pub mod grid;
pub mod net;
pub mod synth;
pub mod tracker;
pub mod train;
pub mod verify;
