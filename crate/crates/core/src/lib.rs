//! Hyperspectral dehazing toolkit.
//!
//! * [`hsi`]: cubes, wavelength tables, band masks, augmentation, composites.
//! * [`haze`]: atmospheric-scattering haze synthesis and pair generation.
//! * [`network`]: band gating, spectral reconstruction, attention refinement, gradients.
//! * [`training`]: losses, Adam, schedule, splits, training loop.
//! * [`metrics`]: PSNR, UIQI, SAM, SSIM.
//! * [`cli`]: file formats, checkpoints and the command implementations.
//! * [`fixture`]: synthetic scenes and cirrus patterns for experiments and tests.

pub mod cli;
pub mod error;
pub mod fixture;
pub mod haze;
pub mod hsi;
pub mod metrics;
pub mod network;
pub mod training;

pub use error::{Error, Result};
pub use hsi::HsiCube;
