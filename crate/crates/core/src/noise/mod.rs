//! Spatially correlated sinogram noise: white Gaussian noise convolved with a
//! truncated, unit-sum Gaussian kernel over the (angle, detector) plane.
//!
//! Randomness is keyed by `(seed, sample, iteration)`. The fixed measurement
//! noise of sample `t` uses stream `(t, 0)`; the noisier-data perturbation of
//! training iteration `i >= 1` uses `(t, i)`.

mod kernel;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tomo::{ScanGeometry, Sinogram};

pub use kernel::{gaussian_kernel, Kernel};

/// Parameters of the correlated noise `G_sigma * N(0, delta^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub delta: f64,
    pub sigma: f64,
    pub kernel_radius: usize,
    pub seed: u64,
}

impl NoiseSpec {
    /// Spec with the default truncation radius `ceil(3 sigma)`.
    pub fn new(delta: f64, sigma: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            delta,
            sigma,
            kernel_radius: Self::default_radius(sigma),
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn default_radius(sigma: f64) -> usize {
        ((3.0 * sigma).ceil() as usize).max(1)
    }

    pub fn with_radius(mut self, radius: usize) -> Result<Self> {
        self.kernel_radius = radius;
        self.validate()?;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise delta must be >= 0, got {}",
                self.delta
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if self.kernel_radius < 1 {
            return Err(Error::InvalidArgument("kernel radius must be >= 1".into()));
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<Kernel> {
        gaussian_kernel(self.sigma, self.kernel_radius)
    }

    /// Standard deviation of an interior noise pixel, `delta * ||kernel||_2`.
    pub fn pixel_std(&self) -> Result<f64> {
        Ok(self.delta * self.kernel()?.sum_sq().sqrt())
    }
}

/// Identifies one independent random sequence under a seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub sample: u64,
    pub iteration: u64,
}

impl RngStream {
    pub fn new(seed: u64, sample: u64, iteration: u64) -> Self {
        Self {
            seed,
            sample,
            iteration,
        }
    }

    /// Stream of the fixed measurement noise of `sample`.
    pub fn measurement(seed: u64, sample: u64) -> Self {
        Self::new(seed, sample, 0)
    }

    /// A ChaCha generator whose 256-bit key is the stream identity itself, so
    /// distinct identities never share a keystream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.sample.to_le_bytes());
        key[16..24].copy_from_slice(&self.iteration.to_le_bytes());
        key[24..32].copy_from_slice(b"ctnoise\x01");
        ChaCha8Rng::from_seed(key)
    }
}

/// Draws a `rows x cols` correlated noise field for `stream`.
///
/// White `N(0, delta^2)` samples are convolved with the kernel under zero
/// padding, so pixels within `kernel_radius` of the border have slightly lower
/// variance than interior ones.
pub fn sample_correlated_noise(
    spec: &NoiseSpec,
    rows: usize,
    cols: usize,
    stream: RngStream,
) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.delta == 0.0 {
        return Ok(vec![0.0; rows * cols]);
    }
    let mut rng = stream.rng();
    let white: Vec<f64> = (0..rows * cols)
        .map(|_| {
            let w: f64 = StandardNormal.sample(&mut rng);
            spec.delta * w
        })
        .collect();
    let kernel = spec.kernel()?;
    Ok(kernel.convolve_zero_padded(&white, rows, cols))
}

/// Noise for a sinogram on `geom`. The field is always drawn on the full angle
/// grid and then restricted, so sparse-view noise equals the matching rows of
/// the full-view noise.
pub fn sample_sinogram_noise(
    spec: &NoiseSpec,
    geom: &ScanGeometry,
    stream: RngStream,
) -> Result<Sinogram> {
    let full = geom.full();
    let values = sample_correlated_noise(spec, full.rows(), full.num_detectors(), stream)?;
    let sino = Sinogram::new(full, values)?;
    if geom.angle_subset().is_some() {
        sino.restrict(geom)
    } else {
        Ok(sino)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_delta_gives_zero_noise() {
        let spec = NoiseSpec::new(0.0, 2.0, 1).unwrap();
        let n = sample_correlated_noise(&spec, 8, 9, RngStream::new(1, 0, 0)).unwrap();
        assert!(n.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_stream_is_bitwise_reproducible() {
        let spec = NoiseSpec::new(5.0, 2.0, 42).unwrap();
        let a = sample_correlated_noise(&spec, 16, 20, RngStream::new(42, 3, 7)).unwrap();
        let b = sample_correlated_noise(&spec, 16, 20, RngStream::new(42, 3, 7)).unwrap();
        let c = sample_correlated_noise(&spec, 16, 20, RngStream::new(42, 3, 8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(NoiseSpec::new(-1.0, 2.0, 0).is_err());
        assert!(NoiseSpec::new(1.0, 0.0, 0).is_err());
        assert!(NoiseSpec::new(1.0, 2.0, 0).unwrap().with_radius(0).is_err());
        assert_eq!(NoiseSpec::new(1.0, 2.0, 0).unwrap().kernel_radius, 6);
    }

    #[test]
    fn sparse_noise_is_row_selection_of_full_noise() {
        let spec = NoiseSpec::new(1.0, 2.0, 9).unwrap();
        let full = ScanGeometry::new(16, 12, 1.0).unwrap();
        let sparse = full.clone().sparse(4).unwrap();
        let stream = RngStream::measurement(9, 2);
        let a = sample_sinogram_noise(&spec, &full, stream).unwrap();
        let b = sample_sinogram_noise(&spec, &sparse, stream).unwrap();
        assert_eq!(a.restrict(&sparse).unwrap(), b);
    }

    /// Empirical moments of one interior pixel and its right neighbour over
    /// independent streams.
    struct Moments {
        mean: f64,
        var: f64,
        lag1: f64,
    }

    fn moments(spec: &NoiseSpec, draws: u64) -> Moments {
        let (rows, cols, r, c) = (20, 20, 10, 10);
        let (mut s, mut ss, mut sp) = (0.0, 0.0, 0.0);
        for i in 0..draws {
            let n =
                sample_correlated_noise(spec, rows, cols, RngStream::new(spec.seed, i, 0)).unwrap();
            let (a, b) = (n[r * cols + c], n[r * cols + c + 1]);
            s += a;
            ss += a * a;
            sp += a * b;
        }
        let d = draws as f64;
        Moments {
            mean: s / d,
            var: ss / d,
            lag1: sp / d,
        }
    }

    #[test]
    fn pixel_moments_match_kernel_autocorrelation() {
        let spec = NoiseSpec::new(3.0, 2.0, 17).unwrap();
        let k = spec.kernel().unwrap();
        let m = moments(&spec, 10_000);
        let var = 9.0 * k.sum_sq();
        let lag1 = 9.0 * k.autocorrelation(0, 1);
        assert!((m.var - var).abs() / var < 0.05, "{} vs {var}", m.var);
        assert!((m.lag1 - lag1).abs() / lag1 < 0.10, "{} vs {lag1}", m.lag1);
        assert!(m.mean.abs() < 4.0 * (var / 10_000.0).sqrt());
    }

    #[test]
    fn distinct_streams_are_uncorrelated() {
        let spec = NoiseSpec::new(1.0, 2.0, 5).unwrap();
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for i in 0..5_000 {
            let a = sample_correlated_noise(&spec, 8, 8, RngStream::new(5, i, 0)).unwrap();
            let b = sample_correlated_noise(&spec, 8, 8, RngStream::new(5, i, 1)).unwrap();
            sab += a[27] * b[27];
            saa += a[27] * a[27];
            sbb += b[27] * b[27];
        }
        let corr = sab / (saa * sbb).sqrt();
        assert!(corr.abs() < 0.05, "{corr}");
    }
}
