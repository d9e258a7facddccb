//! Self-supervised reconstruction methods.
//!
//! + **NN2I** trains `f o B#` against `2y - z` in the data domain, with
//!   `W = Id` (MSE) or `W = grad` (Sobolev); `z = y + eta` with fresh `eta`
//!   per iteration.
//! + **NN2N** (one-step Noisier2Noise) trains against `y` and extrapolates at
//!   inference on `z`.
//! + **N2I** (Noise2Inverse) trains in the image domain on interleaved angle
//!   splits (X:1 strategy).
//!
//! Training only ever sees [`Measurement`]s; clean images live beside them in
//! [`TrainingSample`] for evaluation and oracle stopping.

mod inference;
mod losses;
mod operators;
mod sample;
mod spec;
pub mod theory;
mod training;

pub use inference::{infer, inference_stream, INFERENCE_ITERATION};
pub use losses::{
    n2i_loss, n2i_train_pair, nn2i_loss, nn2i_loss_grad, nn2n_loss, LossContext,
    SplitReconstructions,
};
pub use operators::{GradientMap, RadonMap, ReconOperators};
pub use sample::{Measurement, TrainingSample};
pub use spec::{InferenceInput, Method, MethodSpec, Weighting};
pub use training::{
    checkpoint_scores, select_checkpoint, train, EpochRecord, Selected, StoppingMode, TrainConfig,
    TrainState,
};
