use crate::error::Result;
use crate::nn::{unet, ParamVector};
use crate::noise::{sample_sinogram_noise, NoiseSpec, RngStream};
use crate::tomo::{ImageGrid, Sinogram};

use super::losses::LossContext;
use super::Measurement;
use super::{InferenceInput, Method, MethodSpec, SplitReconstructions};

/// Iteration index reserved for the noise added at inference time. Training
/// iterations count up from 1, so the streams never collide.
pub const INFERENCE_ITERATION: u64 = u64::MAX;

/// Stream for the inference-time noisier data of `sample_id`.
pub fn inference_stream(noise: &NoiseSpec, sample_id: u64) -> RngStream {
    RngStream::new(noise.seed, sample_id, INFERENCE_ITERATION)
}

/// Reconstructs one sinogram with trained parameters.
///
/// + NN2I[y], NN2N[y]: `f(B# y)`.
/// + NN2I[z]: `f(B# z)` with `z = y + eta`.
/// + NN2N[z]: `2 f(B# z) - B# z`, or `2 (f - Id)(B# z)` with the literal switch.
/// + N2I: mean over held-out splits `j` of `f(mean_{i != j} B#_i y)`.
pub fn infer(
    params: &ParamVector,
    spec: &MethodSpec,
    y: &Sinogram,
    sample_id: u64,
    ctx: LossContext<'_>,
) -> Result<ImageGrid> {
    spec.validate()?;
    y.check_geometry(ctx.ops.geometry())?;
    let net = ctx.net;
    match (spec.method, spec.inference_input) {
        (Method::N2i, _) => {
            let m = Measurement {
                sample_id,
                y: y.clone(),
            };
            let splits = SplitReconstructions::new(&m, ctx.ops, spec.n2i_splits)?;
            let k = splits.splits();
            let mut acc = vec![0.0; ctx.ops.width() * ctx.ops.width()];
            for j in 0..k {
                let (input, _) = splits.pair(j)?;
                let out = unet::apply(net, params, &input)?;
                for (a, v) in acc.iter_mut().zip(out.values()) {
                    *a += v / k as f64;
                }
            }
            splits.part(0).like(acc)
        }
        (_, InferenceInput::Y) => unet::apply(net, params, &ctx.ops.fbp(y)?),
        (method, InferenceInput::Z) => {
            let eta = sample_sinogram_noise(
                ctx.noise,
                y.geometry(),
                inference_stream(ctx.noise, sample_id),
            )?;
            let input = ctx.ops.fbp(&y.add(&eta)?)?;
            let out = unet::apply(net, params, &input)?;
            match method {
                Method::Nn2n if spec.literal_nn2n_extrapolation => {
                    out.add_scaled(&input, -1.0)?.map(|v| 2.0 * v)
                }
                Method::Nn2n => out.map(|v| 2.0 * v)?.add_scaled(&input, -1.0),
                _ => Ok(out),
            }
        }
    }
}
