//! Monte-Carlo checks of the identity behind the NN2I loss.
//!
//! With `Y = AX + Xi` and `Z = Y + N`, `Xi` and `N` i.i.d., the target
//! `2Y - Z = AX + Xi - N` is conditionally unbiased for `AX` given `Z`. Hence
//! for any weighting `W` the surrogate risk `E||W A f(B# Z) - W (2Y - Z)||^2`
//! and the supervised risk `E||W A f(B# Z) - W A X||^2` share their minimizer.
//! [`check_linear_minimizers`] verifies this over linear `f` in closed form,
//! [`check_conditional_identity`] verifies the conditional mean directly.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::noise::{sample_correlated_noise, NoiseSpec, RngStream};
use crate::tomo::{radon_forward, ImageGrid, ScanGeometry};

const SIGNAL_DOMAIN: u64 = 0x7369_676e_616c_5f78;
const OPERATOR_DOMAIN: u64 = 0x6f70_6572_6174_6f72;

/// Weighting operator used in the linear check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LinearWeighting {
    Identity,
    /// Random Gaussian `q x m` matrix (full column rank almost surely).
    Random {
        rows: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearCheckConfig {
    pub dim_n: usize,
    pub dim_m: usize,
    pub num_mc: usize,
    pub seed: u64,
    pub weighting: LinearWeighting,
    /// `None` means noiseless data, `Z = Y = AX`.
    pub noise: Option<NoiseSpec>,
}

impl LinearCheckConfig {
    /// `W = Id` with correlated noise of unit strength.
    pub fn new(dim_n: usize, dim_m: usize, num_mc: usize, seed: u64) -> Self {
        Self {
            dim_n,
            dim_m,
            num_mc,
            seed,
            weighting: LinearWeighting::Identity,
            noise: Some(NoiseSpec {
                delta: 1.0,
                sigma: 1.0,
                kernel_radius: 3,
                seed,
            }),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LinearCheckReport {
    pub supervised_minimizer: DMatrix<f64>,
    pub surrogate_minimizer: DMatrix<f64>,
    /// Spectral norm of the difference.
    pub distance: f64,
    /// A ridge term had to be added to a normal-equation solve.
    pub regularized: bool,
}

/// Solves `min_F sum_i ||M F u_i - t_i||^2` given the moments
/// `MtM = M^T M`, `rhs = M^T sum_i t_i u_i^T`, `cuu = sum_i u_i u_i^T`:
/// `F = MtM^{-1} rhs cuu^{-1}`.
fn solve_normal(
    mtm: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    cuu: &DMatrix<f64>,
) -> (DMatrix<f64>, bool) {
    let mut regularized = false;
    let mut inv = |m: &DMatrix<f64>| -> DMatrix<f64> {
        if let Some(ch) = m.clone().cholesky() {
            let svd = m.clone().singular_values();
            let cond = svd.max() / svd.min().max(f64::MIN_POSITIVE);
            if cond < 1e12 {
                return ch.inverse();
            }
        }
        regularized = true;
        let ridge = 1e-10 * m.trace().abs().max(1.0);
        let n = m.nrows();
        (m + DMatrix::identity(n, n) * ridge)
            .try_inverse()
            .unwrap_or_else(|| DMatrix::zeros(n, n))
    };
    let left = inv(mtm);
    let right = inv(cuu);
    (left * rhs * right, regularized)
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let scale = 1.0 / (cols as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        v * scale
    })
}

/// Fits the best linear `f` for the supervised and the surrogate targets on
/// one empirical population and compares them.
///
/// `A` is a random `m x n` matrix shifted towards `[I; 0]` to keep it well
/// conditioned, `B# = A^T`, `X ~ N(0, I)`, and `Xi`, `N` are correlated noise
/// fields of shape `1 x m` from streams `(i, 0)` and `(i, 1)`.
pub fn check_linear_minimizers(cfg: &LinearCheckConfig) -> Result<LinearCheckReport> {
    let (n, m) = (cfg.dim_n, cfg.dim_m);
    if n == 0 || m < n || m > 16 || cfg.num_mc == 0 {
        return Err(Error::InvalidArgument(format!(
            "linear check needs 0 < n <= m <= 16 and draws > 0, got n={n} m={m} draws={}",
            cfg.num_mc
        )));
    }
    let mut op_rng = RngStream::new(cfg.seed ^ OPERATOR_DOMAIN, 0, 0).rng();
    let a = gaussian_matrix(m, n, &mut op_rng) + DMatrix::identity(m, n);
    let w = match cfg.weighting {
        LinearWeighting::Identity => DMatrix::identity(m, m),
        LinearWeighting::Random { rows } => {
            if rows < m {
                return Err(Error::InvalidArgument(format!(
                    "random weighting needs at least {m} rows, got {rows}"
                )));
            }
            gaussian_matrix(rows, m, &mut op_rng)
        }
    };
    let b = a.transpose();
    let wa = &w * &a;

    let mut cuu = DMatrix::<f64>::zeros(n, n);
    let mut c_sup = DMatrix::<f64>::zeros(m, n);
    let mut c_sur = DMatrix::<f64>::zeros(m, n);
    let mut x_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SIGNAL_DOMAIN);
    for i in 0..cfg.num_mc as u64 {
        let x = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut x_rng));
        let ax = &a * x;
        let (xi, eta) = match &cfg.noise {
            Some(spec) => (
                DVector::from_vec(sample_correlated_noise(
                    spec,
                    1,
                    m,
                    RngStream::new(cfg.seed, i, 0),
                )?),
                DVector::from_vec(sample_correlated_noise(
                    spec,
                    1,
                    m,
                    RngStream::new(cfg.seed, i, 1),
                )?),
            ),
            None => (DVector::zeros(m), DVector::zeros(m)),
        };
        let y = &ax + &xi;
        let z = &y + &eta;
        let u = &b * &z;
        let target = &y * 2.0 - &z;
        cuu.ger(1.0, &u, &u, 1.0);
        c_sup.ger(1.0, &ax, &u, 1.0);
        c_sur.ger(1.0, &target, &u, 1.0);
    }
    let mtm = wa.transpose() * &wa;
    let mtw = wa.transpose() * &w;
    let (sup, r1) = solve_normal(&mtm, &(&mtw * c_sup), &cuu);
    let (sur, r2) = solve_normal(&mtm, &(&mtw * c_sur), &cuu);
    if r1 || r2 {
        log::warn!("linear check: normal equations were regularized");
    }
    let distance = (&sup - &sur).singular_values().max();
    Ok(LinearCheckReport {
        supervised_minimizer: sup,
        surrogate_minimizer: sur,
        distance,
        regularized: r1 || r2,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalReport {
    /// Largest `|mean(AX - (2Y - Z))| / std` over bins and sinogram entries.
    pub residual: f64,
    /// Largest `|z-score|` of the unconditional mean over sinogram entries.
    pub unconditional_max_z: f64,
    pub bins_used: usize,
    pub bins_skipped: usize,
}

/// Bins below this many draws are skipped.
const MIN_BIN_DRAWS: usize = 100;
const NUM_BINS: usize = 10;

/// Monte-Carlo estimate of `E[AX - (2Y - Z) | Z]` on a 4x4 image seen from 4
/// angles with 6 detectors.
///
/// Draws are binned by deciles of one central entry of `Z`. Within each bin
/// the mean residual of every sinogram entry is divided by that entry's
/// overall residual standard deviation; the report carries the largest one.
pub fn check_conditional_identity(
    noise: &NoiseSpec,
    num_mc: usize,
    seed: u64,
) -> Result<ConditionalReport> {
    noise.validate()?;
    if num_mc < NUM_BINS * MIN_BIN_DRAWS {
        return Err(Error::InvalidArgument(format!(
            "conditional check needs at least {} draws, got {num_mc}",
            NUM_BINS * MIN_BIN_DRAWS
        )));
    }
    let width = 4;
    let geom = ScanGeometry::new(4, 6, 1.0)?;
    let rows = geom.rows();
    let cols = geom.num_detectors();
    let len = rows * cols;
    let probe = (rows / 2) * cols + cols / 2;

    let mut x_rng = ChaCha8Rng::seed_from_u64(seed ^ SIGNAL_DOMAIN);
    let mut key = Vec::with_capacity(num_mc);
    let mut residuals = Vec::with_capacity(num_mc * len);
    for i in 0..num_mc as u64 {
        let x = ImageGrid::from_fn(width, |_, _| {
            let v: f64 = StandardNormal.sample(&mut x_rng);
            v
        })?;
        let ax = radon_forward(&x, &geom)?;
        let xi = sample_correlated_noise(noise, rows, cols, RngStream::new(seed, i, 0))?;
        let eta = sample_correlated_noise(noise, rows, cols, RngStream::new(seed, i, 1))?;
        for e in 0..len {
            let y = ax.values()[e] + xi[e];
            let z = y + eta[e];
            if e == probe {
                key.push(z);
            }
            residuals.push(ax.values()[e] - (2.0 * y - z));
        }
    }

    let n = num_mc as f64;
    let mut mean = vec![0.0; len];
    for row in residuals.chunks(len) {
        for (m, r) in mean.iter_mut().zip(row) {
            *m += r / n;
        }
    }
    let mut var = vec![0.0; len];
    for row in residuals.chunks(len) {
        for ((v, r), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (r - m).powi(2) / (n - 1.0);
        }
    }
    let std: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    let unconditional_max_z = mean
        .iter()
        .zip(&std)
        .map(|(m, s)| {
            if *s > 0.0 {
                (m / (s / n.sqrt())).abs()
            } else {
                m.abs()
            }
        })
        .fold(0.0, f64::max);

    let mut order: Vec<usize> = (0..num_mc).collect();
    order.sort_by(|&a, &b| key[a].total_cmp(&key[b]));
    let mut residual: f64 = 0.0;
    let (mut bins_used, mut bins_skipped) = (0, 0);
    for bin in 0..NUM_BINS {
        let members = &order[bin * num_mc / NUM_BINS..(bin + 1) * num_mc / NUM_BINS];
        if members.len() < MIN_BIN_DRAWS {
            log::warn!(
                "conditional check: bin {bin} has {} draws, skipped",
                members.len()
            );
            bins_skipped += 1;
            continue;
        }
        bins_used += 1;
        for e in 0..len {
            let m =
                members.iter().map(|&i| residuals[i * len + e]).sum::<f64>() / members.len() as f64;
            let scale = if std[e] > 0.0 { std[e] } else { 1.0 };
            residual = residual.max(m.abs() / scale);
        }
    }
    Ok(ConditionalReport {
        residual,
        unconditional_max_z,
        bins_used,
        bins_skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_minimizers_coincide() {
        let mut cfg = LinearCheckConfig::new(4, 4, 2000, 1);
        cfg.noise = None;
        let report = check_linear_minimizers(&cfg).unwrap();
        assert!(report.distance < 1e-8, "{}", report.distance);
        assert!(!report.regularized);
    }

    #[test]
    fn noiseless_minimizer_inverts_the_pipeline() {
        // With Z = AX and W = Id the fit drives A F A^T A X to A X, i.e.
        // F = (A^T A)^{-1} for a square invertible A.
        let mut cfg = LinearCheckConfig::new(4, 4, 2000, 2);
        cfg.noise = None;
        let report = check_linear_minimizers(&cfg).unwrap();
        let mut op_rng = RngStream::new(2 ^ OPERATOR_DOMAIN, 0, 0).rng();
        let a = gaussian_matrix(4, 4, &mut op_rng) + DMatrix::identity(4, 4);
        let want = (a.transpose() * &a).try_inverse().unwrap();
        let err = (&report.supervised_minimizer - want).abs().max();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn noisy_minimizers_are_close() {
        let report = check_linear_minimizers(&LinearCheckConfig::new(4, 4, 20_000, 3)).unwrap();
        assert!(report.distance < 0.2, "{}", report.distance);
        let mut cfg = LinearCheckConfig::new(4, 4, 20_000, 3);
        cfg.weighting = LinearWeighting::Random { rows: 8 };
        let report = check_linear_minimizers(&cfg).unwrap();
        assert!(report.distance < 0.2, "{}", report.distance);
    }

    #[test]
    fn invalid_dimensions_are_rejected() {
        assert!(check_linear_minimizers(&LinearCheckConfig::new(5, 4, 10, 0)).is_err());
        assert!(check_linear_minimizers(&LinearCheckConfig::new(4, 17, 10, 0)).is_err());
        let mut cfg = LinearCheckConfig::new(4, 4, 10, 0);
        cfg.weighting = LinearWeighting::Random { rows: 3 };
        assert!(check_linear_minimizers(&cfg).is_err());
    }

    #[test]
    fn conditional_residual_vanishes_without_noise() {
        let noise = NoiseSpec::new(0.0, 2.0, 0).unwrap();
        let report = check_conditional_identity(&noise, 2000, 1).unwrap();
        assert_eq!(report.residual, 0.0);
        assert_eq!(report.unconditional_max_z, 0.0);
        assert_eq!(report.bins_used, 10);
    }

    #[test]
    fn conditional_residual_is_small() {
        let noise = NoiseSpec::new(1.0, 2.0, 0).unwrap();
        let report = check_conditional_identity(&noise, 20_000, 2).unwrap();
        assert!(report.residual < 0.15, "{}", report.residual);
        assert!(report.unconditional_max_z < 5.0);
    }
}
