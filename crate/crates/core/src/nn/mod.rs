//! Image-to-image network `f_theta` with reverse-mode gradients.
//!
//! [`Tape`] records a graph of differentiable primitives (convolution, leaky
//! rectifier, pooling, upsampling, concatenation, affine maps, registered
//! [`LinearMap`]s such as the Radon transform, and squared norms) and
//! back-propagates into a flat [`ParamVector`].

mod adam;
mod checkpoint;
mod tape;
mod tensor;
pub(crate) mod unet;

pub use adam::{adam_step, OptimState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use tape::{loss_grad, LinearMap, Tape, Var};
pub use tensor::Tensor;
pub use unet::{net_forward, NetConfig, UNet};

use crate::error::{Error, Result};

/// Flat vector of all trainable weights, in [`UNet`] layout order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {pos}")));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// `self += other`
    pub fn accumulate(&mut self, other: &ParamVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::mismatch(
                "ParamVector::accumulate",
                self.len(),
                other.len(),
            ));
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}
