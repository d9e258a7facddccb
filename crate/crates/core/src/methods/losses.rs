use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{loss_grad, ParamVector, Tape, Tensor, UNet, Var};
use crate::noise::{sample_sinogram_noise, NoiseSpec, RngStream};
use crate::tomo::{grad_forward, Fbp, ImageGrid, Sinogram};

use super::operators::grad_tensor;
use super::{Measurement, Method, MethodSpec, ReconOperators, Weighting};

/// Everything a loss needs besides the parameters and the batch.
#[derive(Clone, Copy)]
pub struct LossContext<'a> {
    pub ops: &'a ReconOperators,
    pub net: &'a UNet,
    pub noise: &'a NoiseSpec,
}

/// Domain tag mixed into the seed of the N2I split-selection stream.
const SPLIT_DOMAIN: u64 = 0x6e32_695f_7370_6c74;

/// Fresh noisier data `z = y + eta` for `(sample, iteration)`.
pub(crate) fn noisier(noise: &NoiseSpec, m: &Measurement, iteration: u64) -> Result<Sinogram> {
    let eta = sample_sinogram_noise(
        noise,
        m.y.geometry(),
        RngStream::new(noise.seed, m.sample_id, iteration),
    )?;
    m.y.add(&eta)
}

/// Records `||W A f(B# z) - W target||^2` for one measurement.
fn record_data_loss(
    tape: &mut Tape<'_>,
    ctx: LossContext<'_>,
    m: &Measurement,
    method: Method,
    weighting: Weighting,
    iteration: u64,
) -> Result<Var> {
    m.y.check_geometry(ctx.ops.geometry())?;
    let z = noisier(ctx.noise, m, iteration)?;
    let target = match method {
        Method::Nn2i => m.y.combine(2.0, &z, -1.0)?,
        Method::Nn2n => m.y.clone(),
        Method::N2i => {
            return Err(Error::InvalidArgument(
                "N2I is trained in the image domain".into(),
            ))
        }
    };
    let input = ctx.ops.fbp(&z)?;
    let x = tape.constant(Tensor::from_image(&input));
    let out = ctx.net.forward(tape, x)?;
    let proj = tape.linear(out, ctx.ops.radon_map())?;
    let (pred, goal) = match weighting {
        Weighting::Identity => (
            proj,
            Tensor::new([1, target.rows(), target.cols()], target.into_values())?,
        ),
        Weighting::Gradient => (
            tape.linear(proj, ctx.ops.gradient_map())?,
            grad_tensor(&grad_forward(&target))?,
        ),
    };
    let goal = tape.constant(goal);
    let diff = tape.sub(pred, goal)?;
    Ok(tape.sum_squares(diff))
}

/// Sum of per-item losses and gradients. Items are evaluated in parallel and
/// reduced in index order, so the result does not depend on the thread count.
fn sum_over<F>(params: &ParamVector, n: usize, record: F) -> Result<(f64, ParamVector)>
where
    F: Fn(usize, &mut Tape<'_>) -> Result<Var> + Sync,
{
    let parts: Vec<Result<(f64, ParamVector)>> = (0..n)
        .into_par_iter()
        .map(|i| loss_grad(params, |t| record(i, t)))
        .collect();
    let mut total = 0.0;
    let mut grad = ParamVector::zeros(params.len());
    for part in parts {
        let (l, g) = part?;
        total += l;
        grad.accumulate(&g)?;
    }
    Ok((total, grad))
}

fn value_over<F>(params: &ParamVector, n: usize, record: F) -> Result<f64>
where
    F: Fn(usize, &mut Tape<'_>) -> Result<Var> + Sync,
{
    let parts: Vec<Result<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut tape = Tape::new(params);
            let v = record(i, &mut tape)?;
            Ok(tape.value(v).data()[0])
        })
        .collect();
    parts.into_iter().sum()
}

/// Noisier2Inverse loss `sum_t ||W A f(B# z_t) - W (2 y_t - z_t)||^2` with
/// `z_t = y_t + eta_t`, `eta_t` drawn from stream `(t, iteration)`.
pub fn nn2i_loss(
    params: &ParamVector,
    batch: &[&Measurement],
    ctx: LossContext<'_>,
    weighting: Weighting,
    iteration: u64,
) -> Result<f64> {
    value_over(params, batch.len(), |i, t| {
        record_data_loss(t, ctx, batch[i], Method::Nn2i, weighting, iteration)
    })
}

/// [`nn2i_loss`] together with its gradient with respect to `params`.
pub fn nn2i_loss_grad(
    params: &ParamVector,
    batch: &[&Measurement],
    ctx: LossContext<'_>,
    weighting: Weighting,
    iteration: u64,
) -> Result<(f64, ParamVector)> {
    sum_over(params, batch.len(), |i, t| {
        record_data_loss(t, ctx, batch[i], Method::Nn2i, weighting, iteration)
    })
}

/// One-step Noisier2Noise loss `sum_t ||A f(B# z_t) - y_t||^2`.
pub fn nn2n_loss(
    params: &ParamVector,
    batch: &[&Measurement],
    ctx: LossContext<'_>,
    iteration: u64,
) -> Result<f64> {
    value_over(params, batch.len(), |i, t| {
        record_data_loss(
            t,
            ctx,
            batch[i],
            Method::Nn2n,
            Weighting::Identity,
            iteration,
        )
    })
}

/// Per-angle-split FBPs of one measurement, computed once and reused.
#[derive(Clone, Debug)]
pub struct SplitReconstructions {
    pub sample_id: u64,
    parts: Vec<ImageGrid>,
}

impl SplitReconstructions {
    pub fn new(m: &Measurement, ops: &ReconOperators, splits: usize) -> Result<Self> {
        m.y.check_geometry(ops.geometry())?;
        let parts = (0..splits)
            .map(|j| {
                let geom = ops.geometry().interleaved_split(splits, j)?;
                let sub = m.y.restrict(&geom)?;
                Fbp::new(&geom, ops.width(), ops.pixel_size())?.apply(&sub)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sample_id: m.sample_id,
            parts,
        })
    }

    pub fn splits(&self) -> usize {
        self.parts.len()
    }

    pub fn part(&self, j: usize) -> &ImageGrid {
        &self.parts[j]
    }

    /// X:1 pair for held-out split `j`: mean of the other splits' FBPs as
    /// input, split `j`'s FBP as target.
    pub fn pair(&self, j: usize) -> Result<(ImageGrid, ImageGrid)> {
        if j >= self.parts.len() {
            return Err(Error::InvalidArgument(format!(
                "split index {j} out of range for {} splits",
                self.parts.len()
            )));
        }
        let k = self.parts.len();
        let w = self.parts[j].width();
        let mut input = vec![0.0; w * w];
        for (i, part) in self.parts.iter().enumerate() {
            if i != j {
                for (acc, v) in input.iter_mut().zip(part.values()) {
                    *acc += v;
                }
            }
        }
        let inv = 1.0 / (k - 1) as f64;
        let input = self.parts[j].like(input.into_iter().map(|v| v * inv).collect())?;
        Ok((input, self.parts[j].clone()))
    }
}

/// Noise2Inverse training pair for held-out split `draw` out of `splits`.
pub fn n2i_train_pair(
    m: &Measurement,
    ops: &ReconOperators,
    splits: usize,
    draw: usize,
) -> Result<(ImageGrid, ImageGrid)> {
    SplitReconstructions::new(m, ops, splits)?.pair(draw)
}

/// Held-out split used for `(sample, iteration)`.
pub(crate) fn split_index(seed: u64, sample_id: u64, iteration: u64, splits: usize) -> usize {
    RngStream::new(seed ^ SPLIT_DOMAIN, sample_id, iteration)
        .rng()
        .random_range(0..splits)
}

fn record_n2i_loss(
    tape: &mut Tape<'_>,
    net: &UNet,
    splits: &SplitReconstructions,
    seed: u64,
    iteration: u64,
) -> Result<Var> {
    let j = split_index(seed, splits.sample_id, iteration, splits.splits());
    let (input, target) = splits.pair(j)?;
    let x = tape.constant(Tensor::from_image(&input));
    let out = net.forward(tape, x)?;
    let goal = tape.constant(Tensor::from_image(&target));
    let diff = tape.sub(out, goal)?;
    Ok(tape.sum_squares(diff))
}

/// Noise2Inverse loss `sum_t ||f(mean_{i != j} B#_i y_t) - B#_j y_t||^2`, with
/// the held-out split `j` drawn per `(t, iteration)`.
pub fn n2i_loss(
    params: &ParamVector,
    batch: &[&SplitReconstructions],
    net: &UNet,
    seed: u64,
    iteration: u64,
) -> Result<f64> {
    value_over(params, batch.len(), |i, t| {
        record_n2i_loss(t, net, batch[i], seed, iteration)
    })
}

/// Batch loss and gradient for training.
pub(crate) enum Batch<'a> {
    Data(Vec<&'a Measurement>),
    Splits(Vec<&'a SplitReconstructions>),
}

pub(crate) fn batch_loss_grad(
    params: &ParamVector,
    batch: &Batch<'_>,
    ctx: LossContext<'_>,
    spec: &MethodSpec,
    iteration: u64,
) -> Result<(f64, ParamVector)> {
    match batch {
        Batch::Data(items) => sum_over(params, items.len(), |i, t| {
            record_data_loss(t, ctx, items[i], spec.method, spec.weighting, iteration)
        }),
        Batch::Splits(items) => sum_over(params, items.len(), |i, t| {
            record_n2i_loss(t, ctx.net, items[i], ctx.noise.seed, iteration)
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::phantom::random_phantom;
    use crate::nn::{net_forward, NetConfig};
    use crate::tomo::{radon_forward, ScanGeometry};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Setup {
        ops: ReconOperators,
        net: UNet,
        noise: NoiseSpec,
        data: Vec<Measurement>,
    }

    fn setup(width: usize, delta: f64) -> Setup {
        let geom = ScanGeometry::for_image(24, width).unwrap();
        let ops = ReconOperators::new(&geom, width).unwrap();
        let cfg = NetConfig {
            depth: 1,
            base_channels: 2,
            ..NetConfig::default()
        };
        let net = UNet::new(&cfg).unwrap();
        let noise = NoiseSpec::new(delta, 2.0, 5).unwrap();
        let data = (0..2)
            .map(|i| {
                let x = random_phantom(width, i).unwrap();
                let xi =
                    sample_sinogram_noise(&noise, &geom, RngStream::measurement(11, i)).unwrap();
                Measurement {
                    sample_id: i,
                    y: radon_forward(&x, &geom).unwrap().add(&xi).unwrap(),
                }
            })
            .collect();
        Setup {
            ops,
            net,
            noise,
            data,
        }
    }

    impl Setup {
        fn ctx(&self) -> LossContext<'_> {
            LossContext {
                ops: &self.ops,
                net: &self.net,
                noise: &self.noise,
            }
        }

        fn batch(&self) -> Vec<&Measurement> {
            self.data.iter().collect()
        }
    }

    fn fd_check(weighting: Weighting) {
        let s = setup(32, 1.0);
        let params = s.net.init_params(3);
        let batch = s.batch();
        let (_, grad) = nn2i_loss_grad(&params, &batch, s.ctx(), weighting, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // Small enough that few leaky-rectifier kinks fall inside the
        // stencil; the loss is O(1e5), so roundoff stays far below 1e-4.
        let eps = 1e-6;
        for _ in 0..20 {
            let dir: Vec<f64> = (0..params.len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let shifted = |sign: f64| {
                let v = params
                    .as_slice()
                    .iter()
                    .zip(&dir)
                    .map(|(p, d)| p + sign * eps * d)
                    .collect();
                nn2i_loss(&ParamVector::new(v).unwrap(), &batch, s.ctx(), weighting, 1).unwrap()
            };
            let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
            let analytic: f64 = grad.as_slice().iter().zip(&dir).map(|(g, d)| g * d).sum();
            let rel = (fd - analytic).abs() / analytic.abs().max(1e-8);
            assert!(
                rel < 1e-4,
                "{weighting:?}: fd {fd} vs {analytic} (rel {rel:e})"
            );
        }
    }

    #[test]
    fn mse_loss_gradient_matches_finite_differences() {
        fd_check(Weighting::Identity);
    }

    #[test]
    fn sobolev_loss_gradient_matches_finite_differences() {
        fd_check(Weighting::Gradient);
    }

    #[test]
    fn loss_value_matches_direct_recomputation() {
        let s = setup(16, 2.0);
        let params = s.net.init_params(4);
        let batch = s.batch();
        for weighting in [Weighting::Identity, Weighting::Gradient] {
            let mut want = 0.0;
            for m in &batch {
                let eta = sample_sinogram_noise(
                    &s.noise,
                    m.y.geometry(),
                    RngStream::new(5, m.sample_id, 7),
                )
                .unwrap();
                let z = m.y.add(&eta).unwrap();
                let target = m.y.combine(2.0, &z, -1.0).unwrap();
                let out = net_forward(&params, &s.ops.fbp(&z).unwrap(), s.net.config()).unwrap();
                let r = radon_forward(&out, s.ops.geometry())
                    .unwrap()
                    .sub(&target)
                    .unwrap();
                want += match weighting {
                    Weighting::Identity => r.dot(&r),
                    Weighting::Gradient => grad_forward(&r).norm_sq(),
                };
            }
            let got = nn2i_loss(&params, &batch, s.ctx(), weighting, 7).unwrap();
            assert!((got - want).abs() <= 1e-10 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_head_gives_target_energy() {
        let s = setup(16, 2.0);
        let mut params = s.net.init_params(4);
        for i in s.net.head_range() {
            params.as_mut_slice()[i] = 0.0;
        }
        let batch = s.batch();
        let mut want_nn2i = 0.0;
        let mut want_nn2n = 0.0;
        for m in &batch {
            let z = noisier(&s.noise, m, 3).unwrap();
            let t = m.y.combine(2.0, &z, -1.0).unwrap();
            want_nn2i += t.dot(&t);
            want_nn2n += m.y.dot(&m.y);
        }
        let a = nn2i_loss(&params, &batch, s.ctx(), Weighting::Identity, 3).unwrap();
        let b = nn2n_loss(&params, &batch, s.ctx(), 3).unwrap();
        assert!((a - want_nn2i).abs() <= 1e-12 * want_nn2i);
        assert!((b - want_nn2n).abs() <= 1e-12 * want_nn2n);
    }

    #[test]
    fn losses_coincide_without_noise() {
        let s = setup(16, 0.0);
        let params = s.net.init_params(4);
        let batch = s.batch();
        let a = nn2i_loss(&params, &batch, s.ctx(), Weighting::Identity, 1).unwrap();
        let b = nn2n_loss(&params, &batch, s.ctx(), 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noisier_target_identity() {
        let width = 16;
        let geom = ScanGeometry::for_image(24, width).unwrap();
        let noise = NoiseSpec::new(3.0, 2.0, 8).unwrap();
        let x = random_phantom(width, 2).unwrap();
        let ax = radon_forward(&x, &geom).unwrap();
        let xi = sample_sinogram_noise(&noise, &geom, RngStream::measurement(8, 2)).unwrap();
        let m = Measurement {
            sample_id: 2,
            y: ax.add(&xi).unwrap(),
        };
        let eta = sample_sinogram_noise(&noise, &geom, RngStream::new(8, 2, 5)).unwrap();
        let z = noisier(&noise, &m, 5).unwrap();
        let target = m.y.combine(2.0, &z, -1.0).unwrap();
        for i in 0..target.values().len() {
            let want = ax.values()[i] + xi.values()[i] - eta.values()[i];
            assert!((target.values()[i] - want).abs() < 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn split_pairs_match_direct_subset_fbp() {
        let s = setup(16, 1.0);
        let m = &s.data[0];
        let splits = SplitReconstructions::new(m, &s.ops, 4).unwrap();
        let geom = s.ops.geometry();
        let direct: Vec<ImageGrid> = (0..4)
            .map(|j| {
                let rows: Vec<usize> = (j..geom.num_angles()).step_by(4).collect();
                let g = geom.clone().with_subset(rows).unwrap();
                Fbp::new(&g, 16, 1.0)
                    .unwrap()
                    .apply(&m.y.restrict(&g).unwrap())
                    .unwrap()
            })
            .collect();
        for j in 0..4 {
            let (input, target) = n2i_train_pair(m, &s.ops, 4, j).unwrap();
            assert_eq!(target.values(), direct[j].values());
            for p in 0..input.len() {
                let want: f64 = (0..4)
                    .filter(|&i| i != j)
                    .map(|i| direct[i].values()[p])
                    .sum::<f64>()
                    / 3.0;
                assert!((input.values()[p] - want).abs() < 1e-12);
            }
        }
        assert!(splits.pair(4).is_err());
    }

    #[test]
    fn split_draws_cover_all_splits() {
        let mut seen = [0usize; 4];
        for it in 1..=400 {
            seen[split_index(3, 7, it, 4)] += 1;
        }
        assert!(seen.iter().all(|&c| c > 60), "{seen:?}");
    }

    #[test]
    fn n2i_loss_is_nonnegative_and_deterministic() {
        let s = setup(16, 1.0);
        let params = s.net.init_params(4);
        let splits: Vec<_> = s
            .data
            .iter()
            .map(|m| SplitReconstructions::new(m, &s.ops, 4).unwrap())
            .collect();
        let refs: Vec<_> = splits.iter().collect();
        let a = n2i_loss(&params, &refs, &s.net, 1, 2).unwrap();
        let b = n2i_loss(&params, &refs, &s.net, 1, 2).unwrap();
        assert!(a > 0.0);
        assert_eq!(a, b);
    }

    #[test]
    fn geometry_mismatch_is_rejected() {
        let s = setup(16, 1.0);
        let other = ScanGeometry::for_image(12, 16).unwrap();
        let m = Measurement {
            sample_id: 0,
            y: Sinogram::zeros(other),
        };
        let params = s.net.init_params(1);
        assert!(nn2i_loss(&params, &[&m], s.ctx(), Weighting::Identity, 1).is_err());
    }
}
