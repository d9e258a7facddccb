//! Self-supervised CT reconstruction under spatially correlated sinogram noise.
//!
//! The crate is organised bottom-up:
//!
//! + [`tomo`]: parallel-beam Radon transform, its exact adjoint, filtered
//!   backprojection and the sinogram-domain discrete gradient.
//! + [`noise`]: Gaussian-kernel-correlated noise with stream-separated RNGs.
//! + [`nn`]: a small reverse-mode tape, a configurable U-Net and Adam.
//! + [`methods`]: Noisier2Inverse (MSE and Sobolev), one-step Noisier2Noise,
//!   Noise2Inverse, plus Monte-Carlo checks of the underlying risk identity.
//! + [`metrics`]: PSNR and SSIM over the reconstruction circle.
//! + [`harness`]: datasets, experiment configs, runs, sweeps and reports.

pub mod error;
pub mod harness;
pub mod methods;
pub mod metrics;
pub mod nn;
pub mod noise;
pub mod tomo;

pub use error::{Error, Result};
