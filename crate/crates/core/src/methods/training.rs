use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::nn::{NetConfig, OptimState, ParamVector, UNet};
use crate::noise::RngStream;

use super::inference::infer;
use super::losses::{batch_loss_grad, Batch, LossContext};
use super::{Measurement, Method, MethodSpec, SplitReconstructions, TrainingSample};

/// Domain tags for the seeds of parameter init and epoch shuffling.
const INIT_DOMAIN: u64 = 0x696e_6974_5f70_6172;
const SHUFFLE_DOMAIN: u64 = 0x7368_7566_666c_6521;

/// Optimization hyperparameters. One epoch is one pass over the training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: u64,
    pub lr: f64,
    pub batch_size: usize,
    /// Parameters are snapshotted every `checkpoint_every` epochs.
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            lr: 5e-5,
            batch_size: 4,
            checkpoint_every: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    /// Mean per-sample loss over the epoch.
    pub loss: f64,
    pub wall_seconds: f64,
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub net_config: NetConfig,
    pub params: ParamVector,
    pub optim: OptimState,
    pub epoch: u64,
    /// Number of optimizer steps taken; noise streams are keyed by it.
    pub iteration: u64,
    pub checkpoints: Vec<(u64, ParamVector)>,
    pub loss_curve: Vec<EpochRecord>,
}

impl TrainState {
    pub fn checkpoint(&self, epoch: u64) -> Option<&ParamVector> {
        self.checkpoints
            .iter()
            .find(|(e, _)| *e == epoch)
            .map(|(_, p)| p)
    }
}

/// Trains `spec.method` on the measurements of `samples`.
///
/// Clean images are never passed to the loss. The result is a pure function
/// of the inputs and the seeds in `cfg` and `ctx.noise`.
pub fn train(
    samples: &[TrainingSample],
    spec: &MethodSpec,
    cfg: &TrainConfig,
    ctx: LossContext<'_>,
) -> Result<TrainState> {
    let measurements: Vec<&Measurement> = samples.iter().map(|s| &s.measurement).collect();
    train_measurements(&measurements, spec, cfg, ctx)
}

pub(crate) fn train_measurements(
    samples: &[&Measurement],
    spec: &MethodSpec,
    cfg: &TrainConfig,
    ctx: LossContext<'_>,
) -> Result<TrainState> {
    spec.validate()?;
    cfg.validate()?;
    ctx.noise.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let net: &UNet = ctx.net;
    net.config().check_input(ctx.ops.width())?;
    let splits = if spec.method == Method::N2i {
        samples
            .iter()
            .map(|m| SplitReconstructions::new(m, ctx.ops, spec.n2i_splits))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    let mut params = net.init_params(cfg.seed ^ INIT_DOMAIN);
    let mut optim = OptimState::new(params.len(), cfg.lr);
    let mut checkpoints = Vec::new();
    let mut loss_curve = Vec::new();
    let mut iteration = 0u64;
    if cfg.epochs == 0 {
        checkpoints.push((0, params.clone()));
    }
    let start = Instant::now();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut RngStream::new(cfg.seed ^ SHUFFLE_DOMAIN, epoch, 0).rng());
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            iteration += 1;
            let batch = if spec.method == Method::N2i {
                Batch::Splits(chunk.iter().map(|&i| &splits[i]).collect())
            } else {
                Batch::Data(chunk.iter().map(|&i| samples[i]).collect())
            };
            let (loss, grad) = batch_loss_grad(&params, &batch, ctx, spec, iteration)
                .map_err(|e| e.in_stage("train"))?;
            optim.step(&mut params, &grad)?;
            total += loss;
        }
        let record = EpochRecord {
            epoch,
            loss: total / samples.len() as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::debug!(
            "{} epoch {epoch}: loss {:.6e}",
            spec.base_label(),
            record.loss
        );
        loss_curve.push(record);
        if epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs {
            checkpoints.push((epoch, params.clone()));
        }
    }
    log::info!(
        "{}: {} epochs, {} steps in {:.1}s",
        spec.base_label(),
        cfg.epochs,
        iteration,
        start.elapsed().as_secs_f64()
    );
    Ok(TrainState {
        net_config: net.config().clone(),
        params,
        optim,
        epoch: cfg.epochs,
        iteration,
        checkpoints,
        loss_curve,
    })
}

/// How the reported checkpoint is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingMode {
    /// Final epoch's parameters.
    LastEpoch,
    /// Checkpoint with the best mean PSNR against clean validation images.
    PsnrOracle,
}

impl std::fmt::Display for StoppingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StoppingMode::LastEpoch => "last_epoch",
            StoppingMode::PsnrOracle => "psnr_oracle",
        })
    }
}

impl std::str::FromStr for StoppingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last_epoch" => Ok(StoppingMode::LastEpoch),
            "psnr_oracle" => Ok(StoppingMode::PsnrOracle),
            _ => Err(Error::Config(format!(
                "unknown stopping mode {s:?} (expected last_epoch or psnr_oracle)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Selected {
    pub epoch: u64,
    pub params: ParamVector,
    /// Mean validation PSNR, when validation was used to select.
    pub val_psnr: Option<f64>,
}

/// Mean validation PSNR of every checkpoint, reconstructing with `spec`.
pub fn checkpoint_scores(
    state: &TrainState,
    spec: &MethodSpec,
    val: &[TrainingSample],
    ctx: LossContext<'_>,
) -> Result<Vec<(u64, f64)>> {
    if val.is_empty() {
        return Err(Error::InvalidArgument(
            "oracle stopping needs a validation set".into(),
        ));
    }
    state
        .checkpoints
        .iter()
        .map(|(epoch, params)| {
            let mut sum = 0.0;
            for s in val {
                let recon = infer(params, spec, s.y(), s.sample_id(), ctx)?;
                sum += psnr(&recon, s.clean()?, None)?;
            }
            Ok((*epoch, sum / val.len() as f64))
        })
        .collect()
}

/// Picks a checkpoint. Oracle ties go to the earliest epoch.
pub fn select_checkpoint(
    state: &TrainState,
    mode: StoppingMode,
    spec: &MethodSpec,
    val: &[TrainingSample],
    ctx: LossContext<'_>,
) -> Result<Selected> {
    match mode {
        StoppingMode::LastEpoch => {
            let (epoch, params) = state
                .checkpoints
                .last()
                .ok_or_else(|| Error::MissingCheckpoint("no checkpoints were recorded".into()))?;
            Ok(Selected {
                epoch: *epoch,
                params: params.clone(),
                val_psnr: None,
            })
        }
        StoppingMode::PsnrOracle => {
            let scores = checkpoint_scores(state, spec, val, ctx)?;
            let mut best: Option<(u64, f64)> = None;
            for (epoch, score) in scores {
                if best.is_none_or(|(_, b)| score > b) {
                    best = Some((epoch, score));
                }
            }
            let (epoch, score) = best
                .ok_or_else(|| Error::MissingCheckpoint("no checkpoints were recorded".into()))?;
            let params = state
                .checkpoint(epoch)
                .ok_or_else(|| Error::MissingCheckpoint(format!("epoch {epoch}")))?
                .clone();
            Ok(Selected {
                epoch,
                params,
                val_psnr: Some(score),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::phantom::random_phantom;
    use crate::methods::ReconOperators;
    use crate::noise::{sample_sinogram_noise, NoiseSpec};
    use crate::tomo::{radon_forward, ImageGrid, ScanGeometry};

    struct Fixture {
        ops: ReconOperators,
        net: UNet,
        noise: NoiseSpec,
        samples: Vec<TrainingSample>,
    }

    fn fixture(count: u64) -> Fixture {
        let width = 16;
        let geom = ScanGeometry::for_image(24, width).unwrap();
        let ops = ReconOperators::new(&geom, width).unwrap();
        let net = UNet::new(&NetConfig {
            depth: 1,
            base_channels: 2,
            ..NetConfig::default()
        })
        .unwrap();
        let noise = NoiseSpec::new(2.0, 2.0, 4).unwrap();
        let samples = (0..count)
            .map(|i| {
                let x = random_phantom(width, i).unwrap();
                let xi =
                    sample_sinogram_noise(&noise, &geom, RngStream::measurement(1, i)).unwrap();
                let y = radon_forward(&x, &geom).unwrap().add(&xi).unwrap();
                TrainingSample::new(i, y, Some(x))
            })
            .collect();
        Fixture {
            ops,
            net,
            noise,
            samples,
        }
    }

    impl Fixture {
        fn ctx(&self) -> LossContext<'_> {
            LossContext {
                ops: &self.ops,
                net: &self.net,
                noise: &self.noise,
            }
        }
    }

    fn cfg(epochs: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            lr: 1e-3,
            batch_size: 2,
            checkpoint_every: 1,
            seed: 3,
        }
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let f = fixture(2);
        let state = train(&f.samples, &MethodSpec::nn2i(), &cfg(0), f.ctx()).unwrap();
        assert_eq!(state.params, f.net.init_params(3 ^ INIT_DOMAIN));
        assert_eq!(state.checkpoints.len(), 1);
        assert!(state.loss_curve.is_empty());
    }

    #[test]
    fn training_ignores_clean_images() {
        let f = fixture(3);
        let poisoned: Vec<TrainingSample> = f
            .samples
            .iter()
            .map(|s| TrainingSample {
                measurement: s.measurement.clone(),
                x_clean: Some(ImageGrid::from_fn(16, |_, _| 1e9).unwrap()),
            })
            .collect();
        let stripped: Vec<TrainingSample> = f
            .samples
            .iter()
            .map(|s| TrainingSample {
                x_clean: None,
                ..s.clone()
            })
            .collect();
        for spec in MethodSpec::all_training_methods() {
            let a = train(&f.samples, &spec, &cfg(2), f.ctx()).unwrap();
            let b = train(&poisoned, &spec, &cfg(2), f.ctx()).unwrap();
            let c = train(&stripped, &spec, &cfg(2), f.ctx()).unwrap();
            assert_eq!(a.params, b.params, "{}", spec.label());
            assert_eq!(a.params, c.params, "{}", spec.label());
        }
    }

    #[test]
    fn training_is_deterministic_and_seed_dependent() {
        let f = fixture(3);
        let spec = MethodSpec::nn2i_sobolev();
        let a = train(&f.samples, &spec, &cfg(2), f.ctx()).unwrap();
        let b = train(&f.samples, &spec, &cfg(2), f.ctx()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.iteration, 4);
        let mut other = cfg(2);
        other.seed = 4;
        let c = train(&f.samples, &spec, &other, f.ctx()).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn loss_decreases_on_a_toy_run() {
        let f = fixture(4);
        for spec in [MethodSpec::nn2i(), MethodSpec::n2i()] {
            let state = train(&f.samples, &spec, &cfg(30), f.ctx()).unwrap();
            let first = state.loss_curve.first().unwrap().loss;
            let last = state.loss_curve.last().unwrap().loss;
            assert!(last < first, "{}: {first} -> {last}", spec.label());
        }
    }

    #[test]
    fn checkpoints_follow_cadence() {
        let f = fixture(2);
        let mut c = cfg(6);
        c.checkpoint_every = 2;
        let state = train(&f.samples, &MethodSpec::nn2n(), &c, f.ctx()).unwrap();
        let epochs: Vec<u64> = state.checkpoints.iter().map(|(e, _)| *e).collect();
        assert_eq!(epochs, vec![2, 4, 6]);
        assert_eq!(state.checkpoint(6), Some(&state.params));
    }

    #[test]
    fn selection_modes() {
        let f = fixture(3);
        let spec = MethodSpec::nn2i();
        let single = train(&f.samples, &spec, &cfg(0), f.ctx()).unwrap();
        let last = select_checkpoint(&single, StoppingMode::LastEpoch, &spec, &f.samples, f.ctx())
            .unwrap();
        let oracle = select_checkpoint(
            &single,
            StoppingMode::PsnrOracle,
            &spec,
            &f.samples,
            f.ctx(),
        )
        .unwrap();
        assert_eq!(last.params, oracle.params);

        let state = train(&f.samples, &spec, &cfg(8), f.ctx()).unwrap();
        let last =
            select_checkpoint(&state, StoppingMode::LastEpoch, &spec, &f.samples, f.ctx()).unwrap();
        assert_eq!(last.epoch, 8);
        assert_eq!(last.params, state.params);
        let scores = checkpoint_scores(&state, &spec, &f.samples, f.ctx()).unwrap();
        let oracle =
            select_checkpoint(&state, StoppingMode::PsnrOracle, &spec, &f.samples, f.ctx())
                .unwrap();
        let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(oracle.val_psnr, Some(best));
        assert!(best >= scores.last().unwrap().1);
    }

    #[test]
    fn oracle_needs_clean_validation() {
        let f = fixture(2);
        let spec = MethodSpec::nn2i();
        let state = train(&f.samples, &spec, &cfg(1), f.ctx()).unwrap();
        assert!(select_checkpoint(&state, StoppingMode::PsnrOracle, &spec, &[], f.ctx()).is_err());
        let blind: Vec<_> = f
            .samples
            .iter()
            .map(|s| TrainingSample {
                x_clean: None,
                ..s.clone()
            })
            .collect();
        assert!(
            select_checkpoint(&state, StoppingMode::PsnrOracle, &spec, &blind, f.ctx()).is_err()
        );
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let f = fixture(1);
        assert!(train(&[], &MethodSpec::nn2i(), &cfg(1), f.ctx()).is_err());
    }
}
