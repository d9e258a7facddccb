//! Parallel-beam tomography operators.
//!
//! All operators are linear and come in exact transpose pairs so they can sit
//! inside a reverse-mode gradient computation:
//!
//! | forward            | transpose          |
//! |--------------------|--------------------|
//! | [`radon_forward`]  | [`radon_adjoint`]  |
//! | [`grad_forward`]   | [`grad_adjoint`]   |
//!
//! [`fbp`] is the fixed initial reconstruction map (ramp filter followed by
//! the normalized backprojection).

mod fbp;
mod geometry;
mod gradient;
pub(crate) mod gradient_impl {
    pub(crate) use super::gradient::{adjoint_diff, forward_diff};
}
mod image;
mod radon;
mod sinogram;

pub use fbp::{fbp, Fbp};
pub use geometry::ScanGeometry;
pub use gradient::{grad_adjoint, grad_forward, GradField};
pub use image::ImageGrid;
pub use radon::{radon_adjoint, radon_forward};
pub use sinogram::Sinogram;
