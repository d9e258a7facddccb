//! Single-method runs: data preparation, training, checkpoint selection,
//! evaluation and persistence.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::methods::{
    infer, select_checkpoint, train, EpochRecord, InferenceInput, LossContext, MethodSpec,
    ReconOperators, StoppingMode, TrainState, TrainingSample,
};
use crate::metrics::{psnr, ssim, Summary};
use crate::nn::{Checkpoint, OptimState, UNet};
use crate::noise::{NoiseSpec, RngStream};
use crate::tomo::{ImageGrid, ScanGeometry};

use super::config::ExperimentConfig;
use super::dataset::{ingest_dataset, synthesize};
use super::io::{write_pfm, write_png};
use super::phantom::random_phantom;

const PHANTOM_DOMAIN: u64 = 0x7068_616e_746f_6d73;

/// Synthesized splits shared by every method of a comparison.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub geometry: ScanGeometry,
    pub train: Vec<TrainingSample>,
    pub val: Vec<TrainingSample>,
    pub test: Vec<TrainingSample>,
    pub noise_train: NoiseSpec,
    pub noise_val: NoiseSpec,
    pub noise_test: NoiseSpec,
}

/// Clean images: the dataset directory if configured, else random phantoms.
pub fn load_images(cfg: &ExperimentConfig) -> Result<Vec<ImageGrid>> {
    let size = cfg.dataset.image_size;
    match &cfg.dataset.path {
        Some(dir) => ingest_dataset(dir, size),
        None => (0..cfg.dataset.phantom_count as u64)
            .map(|i| {
                let seed = RngStream::new(cfg.seed ^ PHANTOM_DOMAIN, i, 0)
                    .rng()
                    .next_u64();
                random_phantom(size, seed)
            })
            .collect(),
    }
}

/// Splits images in order and synthesizes measurements. Sample ids run
/// consecutively across the splits, so no two samples share a noise stream.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    cfg.validate()?;
    let images = load_images(cfg).map_err(|e| e.in_stage("ingest"))?;
    let (n_train, n_val, n_test) = cfg.dataset.split.counts(images.len());
    if n_train == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "{} images give an empty train or test split",
            images.len()
        )));
    }
    let geometry = cfg.geometry()?;
    let noise_train = cfg.noise.train.spec(cfg.seed)?;
    let noise_val = cfg.noise.val().spec(cfg.seed)?;
    let noise_test = cfg.noise.test().spec(cfg.seed)?;
    let synth = |range: std::ops::Range<usize>, noise: &NoiseSpec| {
        synthesize(&images[range.clone()], &geometry, noise, range.start as u64)
            .map_err(|e| e.in_stage("synthesize"))
    };
    let train = synth(0..n_train, &noise_train)?;
    let val = synth(n_train..n_train + n_val, &noise_val)?;
    let test = synth(n_train + n_val..n_train + n_val + n_test, &noise_test)?;
    Ok(PreparedData {
        geometry,
        train,
        val,
        test,
        noise_train,
        noise_val,
        noise_test,
    })
}

/// One `metrics.csv` line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub method: String,
    pub stopping: StoppingMode,
    pub inference: InferenceInput,
    pub sample_id: u64,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricRow {
    /// Column label such as `NN2Is[y]` or `N2I`.
    pub fn variant(&self) -> String {
        if self.method == "N2I" {
            self.method.clone()
        } else {
            format!("{}[{}]", self.method, self.inference)
        }
    }
}

/// Which checkpoint a (stopping, inference) pair ended up using.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub stopping: StoppingMode,
    pub inference: InferenceInput,
    pub epoch: u64,
    pub val_psnr: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub data_seconds: f64,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config: ExperimentConfig,
    pub param_count: usize,
    pub checkpoint_epochs: Vec<u64>,
    pub loss_curve: Vec<EpochRecord>,
    pub selections: Vec<SelectionRecord>,
    pub metrics: Vec<MetricRow>,
    pub timings: Timings,
}

impl RunRecord {
    pub fn rows(&self, stopping: StoppingMode, inference: InferenceInput) -> Vec<&MetricRow> {
        self.metrics
            .iter()
            .filter(|r| r.stopping == stopping && r.inference == inference)
            .collect()
    }

    pub fn psnr_summary(&self, stopping: StoppingMode, inference: InferenceInput) -> Summary {
        let v: Vec<f64> = self
            .rows(stopping, inference)
            .iter()
            .map(|r| r.psnr)
            .collect();
        Summary::of(&v)
    }

    pub fn ssim_summary(&self, stopping: StoppingMode, inference: InferenceInput) -> Summary {
        let v: Vec<f64> = self
            .rows(stopping, inference)
            .iter()
            .map(|r| r.ssim)
            .collect();
        Summary::of(&v)
    }
}

/// Reconstructions of the test split for one (stopping, inference) pair.
#[derive(Clone, Debug)]
pub struct Reconstructions {
    pub stopping: StoppingMode,
    pub inference: InferenceInput,
    pub images: Vec<(u64, ImageGrid)>,
}

/// Everything a run produces in memory.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub record: RunRecord,
    pub state: TrainState,
    pub reconstructions: Vec<Reconstructions>,
}

pub(crate) struct Model {
    pub ops: ReconOperators,
    pub net: UNet,
}

impl Model {
    pub fn new(cfg: &ExperimentConfig, geometry: &ScanGeometry) -> Result<Self> {
        Ok(Self {
            ops: ReconOperators::new(geometry, cfg.dataset.image_size)?,
            net: UNet::new(&cfg.net)?,
        })
    }

    pub fn ctx<'a>(&'a self, noise: &'a NoiseSpec) -> LossContext<'a> {
        LossContext {
            ops: &self.ops,
            net: &self.net,
            noise,
        }
    }
}

pub fn train_stage(cfg: &ExperimentConfig, data: &PreparedData) -> Result<TrainState> {
    let model = Model::new(cfg, &data.geometry)?;
    train(
        &data.train,
        &cfg.method,
        &cfg.train_config(),
        model.ctx(&data.noise_train),
    )
    .map_err(|e| e.in_stage("train"))
}

/// Selects checkpoints for every configured stopping mode and inference
/// variant, then scores the test split.
pub fn evaluate_stage(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    state: &TrainState,
) -> Result<(Vec<SelectionRecord>, Vec<MetricRow>, Vec<Reconstructions>)> {
    let model = Model::new(cfg, &data.geometry)?;
    let run_id = cfg.run_id();
    let mut selections = Vec::new();
    let mut rows = Vec::new();
    let mut recons = Vec::new();
    for inference in cfg.method.inference_variants() {
        let spec = cfg.method.clone().with_inference(inference);
        for &stopping in &cfg.stopping {
            let chosen = select_checkpoint(
                state,
                stopping,
                &spec,
                &data.val,
                model.ctx(&data.noise_val),
            )
            .map_err(|e| e.in_stage("select"))?;
            selections.push(SelectionRecord {
                stopping,
                inference,
                epoch: chosen.epoch,
                val_psnr: chosen.val_psnr,
            });
            let mut images = Vec::with_capacity(data.test.len());
            for s in &data.test {
                let recon = infer(
                    &chosen.params,
                    &spec,
                    s.y(),
                    s.sample_id(),
                    model.ctx(&data.noise_test),
                )
                .map_err(|e| e.in_stage("evaluate"))?;
                let clean = s.clean()?;
                rows.push(MetricRow {
                    run_id: run_id.clone(),
                    method: spec.base_label().to_string(),
                    stopping,
                    inference,
                    sample_id: s.sample_id(),
                    psnr: psnr(&recon, clean, None)?,
                    ssim: ssim(&recon, clean, None)?,
                });
                images.push((s.sample_id(), recon));
            }
            recons.push(Reconstructions {
                stopping,
                inference,
                images,
            });
        }
    }
    Ok((selections, rows, recons))
}

/// Trains and evaluates on prepared data without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig, data: &PreparedData) -> Result<RunOutput> {
    let t0 = Instant::now();
    let state = train_stage(cfg, data)?;
    let train_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let (selections, metrics, reconstructions) = evaluate_stage(cfg, data, &state)?;
    let record = RunRecord {
        run_id: cfg.run_id(),
        config: cfg.clone(),
        param_count: state.params.len(),
        checkpoint_epochs: state.checkpoints.iter().map(|(e, _)| *e).collect(),
        loss_curve: state.loss_curve.clone(),
        selections,
        metrics,
        timings: Timings {
            data_seconds: 0.0,
            train_seconds,
            eval_seconds: t1.elapsed().as_secs_f64(),
        },
    };
    Ok(RunOutput {
        record,
        state,
        reconstructions,
    })
}

/// Full pipeline with outputs under `cfg.run_dir()`:
/// `config.toml`, `loss_curve.csv`, `checkpoints/`, `metrics.csv`,
/// `recon/`, `run_record.json`. Training artifacts are written before
/// evaluation starts, so they survive an evaluation failure.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let t0 = Instant::now();
    let data = prepare_data(cfg)?;
    let data_seconds = t0.elapsed().as_secs_f64();
    let dir = cfg.run_dir();
    create_dir(&dir)?;
    write_text(&dir.join("config.toml"), &cfg.to_toml()?)?;

    let t1 = Instant::now();
    let state = train_stage(cfg, &data)?;
    let train_seconds = t1.elapsed().as_secs_f64();
    write_training_artifacts(&dir, cfg, &state).map_err(|e| e.in_stage("persist"))?;

    let t2 = Instant::now();
    let (selections, metrics, reconstructions) = evaluate_stage(cfg, &data, &state)?;
    let record = RunRecord {
        run_id: cfg.run_id(),
        config: cfg.clone(),
        param_count: state.params.len(),
        checkpoint_epochs: state.checkpoints.iter().map(|(e, _)| *e).collect(),
        loss_curve: state.loss_curve.clone(),
        selections,
        metrics,
        timings: Timings {
            data_seconds,
            train_seconds,
            eval_seconds: t2.elapsed().as_secs_f64(),
        },
    };
    write_evaluation_artifacts(&dir, &record, &reconstructions)
        .map_err(|e| e.in_stage("persist"))?;
    Ok(record)
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_path(run_dir: &Path, epoch: u64) -> PathBuf {
    run_dir
        .join("checkpoints")
        .join(format!("epoch_{epoch:06}.ckpt"))
}

pub fn write_training_artifacts(
    dir: &Path,
    cfg: &ExperimentConfig,
    state: &TrainState,
) -> Result<()> {
    create_dir(&dir.join("checkpoints"))?;
    for (epoch, params) in &state.checkpoints {
        Checkpoint {
            config: cfg.net.clone(),
            epoch: *epoch,
            params: params.clone(),
        }
        .save(&checkpoint_path(dir, *epoch))?;
    }
    write_csv(&dir.join("loss_curve.csv"), &state.loss_curve)
}

/// Rebuilds a [`TrainState`] from the checkpoints of a finished run.
pub fn load_training_state(dir: &Path, cfg: &ExperimentConfig) -> Result<TrainState> {
    let ckpt_dir = dir.join("checkpoints");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&ckpt_dir)
        .map_err(|e| Error::io(&ckpt_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    paths.sort();
    let mut checkpoints = Vec::new();
    for path in &paths {
        let ckpt = Checkpoint::load(path)?;
        if ckpt.config != cfg.net {
            return Err(Error::Checkpoint(format!(
                "{} was written for a different network",
                path.display()
            )));
        }
        checkpoints.push((ckpt.epoch, ckpt.params));
    }
    let (epoch, params) = checkpoints
        .last()
        .cloned()
        .ok_or_else(|| Error::MissingCheckpoint(ckpt_dir.display().to_string()))?;
    let loss_path = dir.join("loss_curve.csv");
    let loss_curve = if loss_path.exists() {
        read_csv(&loss_path)?
    } else {
        Vec::new()
    };
    Ok(TrainState {
        net_config: cfg.net.clone(),
        optim: OptimState::new(params.len(), cfg.train.lr),
        params,
        epoch,
        iteration: 0,
        checkpoints,
        loss_curve,
    })
}

pub fn write_evaluation_artifacts(
    dir: &Path,
    record: &RunRecord,
    recons: &[Reconstructions],
) -> Result<()> {
    write_csv(&dir.join("metrics.csv"), &record.metrics)?;
    let recon_dir = dir.join("recon");
    create_dir(&recon_dir)?;
    for set in recons {
        for (id, image) in &set.images {
            let stem = format!("{}_{}_{id:05}", set.stopping, set.inference);
            write_pfm(&recon_dir.join(format!("{stem}.pfm")), image)?;
            write_png(&recon_dir.join(format!("{stem}.png")), image, 0.0, 1.0)?;
        }
    }
    let json = serde_json::to_string_pretty(record)?;
    write_text(&dir.join("run_record.json"), &json)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Recomputes one metric cell from the configuration alone: regenerates
/// the data, retrains, reselects and re-infers.
pub fn replay_cell(
    cfg: &ExperimentConfig,
    stopping: StoppingMode,
    inference: InferenceInput,
    sample_id: u64,
) -> Result<MetricRow> {
    let data = prepare_data(cfg)?;
    let state = train_stage(cfg, &data)?;
    let model = Model::new(cfg, &data.geometry)?;
    let spec: MethodSpec = cfg.method.clone().with_inference(inference);
    let chosen = select_checkpoint(
        &state,
        stopping,
        &spec,
        &data.val,
        model.ctx(&data.noise_val),
    )?;
    let sample = data
        .test
        .iter()
        .find(|s| s.sample_id() == sample_id)
        .ok_or_else(|| {
            Error::InvalidArgument(format!("sample {sample_id} is not in the test split"))
        })?;
    let recon = infer(
        &chosen.params,
        &spec,
        sample.y(),
        sample_id,
        model.ctx(&data.noise_test),
    )?;
    let clean = sample.clean()?;
    Ok(MetricRow {
        run_id: cfg.run_id(),
        method: spec.base_label().to_string(),
        stopping,
        inference,
        sample_id,
        psnr: psnr(&recon, clean, None)?,
        ssim: ssim(&recon, clean, None)?,
    })
}
