//! Experiment configuration, read from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::methods::{MethodSpec, StoppingMode, TrainConfig};
use crate::nn::NetConfig;
use crate::noise::NoiseSpec;
use crate::tomo::ScanGeometry;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Prefix of the run id and output subdirectory.
    #[serde(default = "default_name")]
    pub name: String,
    /// Seeds phantoms, measurement noise, noisier draws and network init.
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub geometry: GeometryConfig,
    pub noise: NoiseConfig,
    pub method: MethodSpec,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub train: TrainSection,
    /// Stopping modes to report; both by default.
    #[serde(default = "default_stopping")]
    pub stopping: Vec<StoppingMode>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_name() -> String {
    "run".into()
}

fn default_stopping() -> Vec<StoppingMode> {
    vec![StoppingMode::LastEpoch, StoppingMode::PsnrOracle]
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Directory of grayscale PNG/PGM images. Without it, random phantoms are
    /// generated.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_phantoms")]
    pub phantom_count: usize,
    pub image_size: usize,
    #[serde(default)]
    pub split: SplitFractions,
}

fn default_phantoms() -> usize {
    24
}

/// Fractions of the (filename-ordered) dataset given to each split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    /// Sample counts for `n` items: train and val are rounded, test takes the
    /// remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let train = ((n as f64) * self.train).round() as usize;
        let val = (((n as f64) * self.val).round() as usize).min(n - train.min(n));
        let train = train.min(n);
        (train, val, n - train - val)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub num_angles: usize,
    /// Keep every `num_angles / sparse_angles`-th angle.
    #[serde(default)]
    pub sparse_angles: Option<usize>,
    /// Defaults to the smallest even count covering the image diagonal.
    #[serde(default)]
    pub num_detectors: Option<usize>,
}

impl GeometryConfig {
    pub fn build(&self, image_size: usize) -> Result<ScanGeometry> {
        let full = match self.num_detectors {
            Some(d) => ScanGeometry::new(self.num_angles, d, 1.0)?,
            None => ScanGeometry::for_image(self.num_angles, image_size)?,
        };
        full.check_covers(image_size, 1.0)?;
        match self.sparse_angles {
            Some(count) => full.sparse(count),
            None => Ok(full),
        }
    }
}

/// Correlated-noise parameters; the seed comes from the experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    pub delta: f64,
    pub sigma: f64,
    #[serde(default)]
    pub kernel_radius: Option<usize>,
}

impl NoiseParams {
    pub fn spec(&self, seed: u64) -> Result<NoiseSpec> {
        let spec = NoiseSpec::new(self.delta, self.sigma, seed)?;
        match self.kernel_radius {
            Some(r) => spec.with_radius(r),
            None => Ok(spec),
        }
    }
}

/// Noise per split; validation and test fall back to the training noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub train: NoiseParams,
    #[serde(default)]
    pub val: Option<NoiseParams>,
    #[serde(default)]
    pub test: Option<NoiseParams>,
}

impl NoiseConfig {
    pub fn uniform(delta: f64, sigma: f64) -> Self {
        Self {
            train: NoiseParams {
                delta,
                sigma,
                kernel_radius: None,
            },
            val: None,
            test: None,
        }
    }

    pub fn val(&self) -> NoiseParams {
        self.val.unwrap_or(self.train)
    }

    pub fn test(&self) -> NoiseParams {
        self.test.unwrap_or(self.train)
    }
}

/// Optimization settings; the seed is the experiment seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            lr: t.lr,
            batch_size: t.batch_size,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale setup: 8 random 64x64 phantoms, 128 angles, a small
    /// network and 300 epochs.
    pub fn desk() -> Self {
        Self {
            name: default_name(),
            seed: 0,
            dataset: DatasetConfig {
                path: None,
                phantom_count: 8,
                image_size: 64,
                split: SplitFractions::default(),
            },
            geometry: GeometryConfig {
                num_angles: 128,
                sparse_angles: None,
                num_detectors: None,
            },
            noise: NoiseConfig::uniform(10.0, 2.0),
            method: MethodSpec::nn2i_sobolev(),
            net: NetConfig {
                depth: 2,
                base_channels: 4,
                ..NetConfig::default()
            },
            train: TrainSection {
                epochs: 300,
                lr: 1e-3,
                batch_size: 4,
                checkpoint_every: 10,
            },
            stopping: default_stopping(),
            output_dir: default_output(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            checkpoint_every: self.train.checkpoint_every,
            seed: self.seed,
        }
    }

    pub fn geometry(&self) -> Result<ScanGeometry> {
        self.geometry.build(self.dataset.image_size)
    }

    /// `name-METHOD-sSEED`, also the output subdirectory.
    pub fn run_id(&self) -> String {
        format!("{}-{}-s{}", self.name, self.method.base_label(), self.seed)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(self.run_id())
    }

    /// Checks everything that can be checked before any data is touched.
    pub fn validate(&self) -> Result<()> {
        let s = &self.dataset.split;
        let fractions = [s.train, s.val, s.test];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
            || (s.train + s.val + s.test - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "split fractions must lie in [0, 1] and sum to 1, got {fractions:?}"
            )));
        }
        if let Some(path) = &self.dataset.path {
            if !path.is_dir() {
                return Err(Error::Config(format!(
                    "dataset directory {} does not exist",
                    path.display()
                )));
            }
        } else if self.dataset.phantom_count == 0 {
            return Err(Error::Config("phantom_count must be positive".into()));
        }
        self.method.validate()?;
        self.net.validate()?;
        self.net.check_input(self.dataset.image_size)?;
        self.train_config().validate()?;
        if self.train.epochs > 0
            && !self
                .train
                .epochs
                .is_multiple_of(self.train.checkpoint_every)
        {
            return Err(Error::Config(format!(
                "checkpoint_every ({}) must divide epochs ({})",
                self.train.checkpoint_every, self.train.epochs
            )));
        }
        for params in [self.noise.train, self.noise.val(), self.noise.test()] {
            params.spec(self.seed)?;
        }
        let geom = self.geometry()?;
        if self.method.method == crate::methods::Method::N2i {
            geom.interleaved_split(self.method.n2i_splits, 0)?;
        }
        if self.stopping.is_empty() {
            return Err(Error::Config(
                "at least one stopping mode is required".into(),
            ));
        }
        Ok(())
    }
}
