//! Reference-based quality metrics restricted to the inscribed reconstruction
//! circle. Pixels outside the circle never influence a score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tomo::ImageGrid;

const SSIM_RADIUS: isize = 5;
const SSIM_SIGMA: f64 = 1.5;

fn check(recon: &ImageGrid, clean: &ImageGrid) -> Result<()> {
    if recon.width() != clean.width() {
        return Err(Error::mismatch(
            "metric inputs",
            clean.width(),
            recon.width(),
        ));
    }
    Ok(())
}

/// Dynamic range `max - min` of `clean` inside the circle.
pub fn data_range(clean: &ImageGrid) -> f64 {
    let mask = ImageGrid::circle_mask(clean.width());
    let (lo, hi) = clean
        .values()
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| {
            (lo.min(v), hi.max(v))
        });
    hi - lo
}

fn resolve_range(clean: &ImageGrid, range: Option<f64>) -> Result<f64> {
    let r = range.unwrap_or_else(|| data_range(clean));
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "data range must be positive, got {r}"
        )));
    }
    Ok(r)
}

/// Mean squared error over the circle.
pub fn masked_mse(recon: &ImageGrid, clean: &ImageGrid) -> Result<f64> {
    check(recon, clean)?;
    let mask = ImageGrid::circle_mask(clean.width());
    let (sum, n) = recon
        .values()
        .iter()
        .zip(clean.values())
        .zip(&mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), ((a, b), _)| {
            (s + (a - b).powi(2), n + 1)
        });
    Ok(sum / n as f64)
}

/// `10 log10(range^2 / mse)` in dB; `+inf` for identical images.
/// `range` defaults to the clean image's dynamic range.
pub fn psnr(recon: &ImageGrid, clean: &ImageGrid, range: Option<f64>) -> Result<f64> {
    let range = resolve_range(clean, range)?;
    let mse = masked_mse(recon, clean)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (range * range / mse).log10())
}

/// SSIM with an 11x11 Gaussian window (sigma 1.5), `C1 = (0.01 L)^2`,
/// `C2 = (0.03 L)^2`, averaged over the circle. Local statistics are weighted
/// by the window restricted to in-circle pixels and renormalized.
pub fn ssim(recon: &ImageGrid, clean: &ImageGrid, range: Option<f64>) -> Result<f64> {
    check(recon, clean)?;
    let l = resolve_range(clean, range)?;
    let c1 = (0.01 * l).powi(2);
    let c2 = (0.03 * l).powi(2);
    let n = clean.width();
    let mask = ImageGrid::circle_mask(n);
    let window: Vec<f64> = (-SSIM_RADIUS..=SSIM_RADIUS)
        .map(|i| (-(i * i) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let (a, b) = (recon.values(), clean.values());

    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..n as isize {
        for c in 0..n as isize {
            if !mask[(r * n as isize + c) as usize] {
                continue;
            }
            let (mut sw, mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for dr in -SSIM_RADIUS..=SSIM_RADIUS {
                let rr = r + dr;
                if rr < 0 || rr >= n as isize {
                    continue;
                }
                for dc in -SSIM_RADIUS..=SSIM_RADIUS {
                    let cc = c + dc;
                    if cc < 0 || cc >= n as isize {
                        continue;
                    }
                    let k = (rr * n as isize + cc) as usize;
                    if !mask[k] {
                        continue;
                    }
                    let w =
                        window[(dr + SSIM_RADIUS) as usize] * window[(dc + SSIM_RADIUS) as usize];
                    sw += w;
                    ma += w * a[k];
                    mb += w * b[k];
                    aa += w * a[k] * a[k];
                    bb += w * b[k] * b[k];
                    ab += w * a[k] * b[k];
                }
            }
            let (ma, mb) = (ma / sw, mb / sw);
            let va = aa / sw - ma * ma;
            let vb = bb / sw - mb * mb;
            let cov = ab / sw - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Location and spread of a set of per-sample scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                median: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self {
            mean,
            std,
            median: median(values),
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-sample PSNR/SSIM for a set of reconstructions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub sample_ids: Vec<u64>,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl MetricReport {
    pub fn push(&mut self, sample_id: u64, recon: &ImageGrid, clean: &ImageGrid) -> Result<()> {
        self.sample_ids.push(sample_id);
        self.psnr.push(psnr(recon, clean, None)?);
        self.ssim.push(ssim(recon, clean, None)?);
        Ok(())
    }

    pub fn psnr_summary(&self) -> Summary {
        Summary::of(&self.psnr)
    }

    pub fn ssim_summary(&self) -> Summary {
        Summary::of(&self.ssim)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(width: usize, rng: &mut impl Rng) -> ImageGrid {
        ImageGrid::from_fn(width, |_, _| rng.random_range(0.0..1.0)).unwrap()
    }

    #[test]
    fn identical_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random(16, &mut rng);
        assert_eq!(psnr(&a, &a, None).unwrap(), f64::INFINITY);
        assert_eq!(ssim(&a, &a, None).unwrap(), 1.0);
    }

    #[test]
    fn constant_offset_gives_20_db() {
        let clean =
            ImageGrid::from_fn(20, |r, c| if (r + c) % 2 == 0 { 0.0 } else { 1.0 }).unwrap();
        let recon = clean.map(|v| v + 0.1).unwrap();
        assert!((masked_mse(&recon, &clean).unwrap() - 0.01).abs() < 1e-12);
        assert!((psnr(&recon, &clean, None).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (random(24, &mut rng), random(24, &mut rng));
        let c = 11.5;
        let (mut lo, mut hi, mut s, mut n) = (f64::MAX, f64::MIN, 0.0, 0.0);
        for r in 0..24 {
            for col in 0..24 {
                let (dr, dc) = (r as f64 - c, col as f64 - c);
                if dr * dr + dc * dc <= 144.0 {
                    let v = b.get(r, col);
                    lo = lo.min(v);
                    hi = hi.max(v);
                    s += (a.get(r, col) - v).powi(2);
                    n += 1.0;
                }
            }
        }
        let want = 10.0 * ((hi - lo).powi(2) / (s / n)).log10();
        assert!((psnr(&a, &b, None).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn anticorrelated_ssim_is_negative() {
        let clean = ImageGrid::from_fn(16, |r, c| ((r * 3 + c * 5) as f64).sin()).unwrap();
        let neg = clean.map(|v| -v).unwrap();
        assert!(ssim(&neg, &clean, None).unwrap() < 0.0);
    }

    #[test]
    fn shape_mismatch() {
        assert!(psnr(&ImageGrid::zeros(4), &ImageGrid::zeros(6), Some(1.0)).is_err());
        assert!(ssim(&ImageGrid::zeros(4), &ImageGrid::zeros(6), Some(1.0)).is_err());
    }

    #[test]
    fn summary_stats() {
        let s = Summary::of(&[1.0, 3.0, 2.0, 10.0]);
        assert_eq!(s.mean, 4.0);
        assert_eq!(s.median, 2.5);
    }

    /// Two-pass SSIM written directly from the definition: an explicit 2D
    /// window, centred second moments.
    fn naive_ssim(a: &ImageGrid, b: &ImageGrid, l: f64) -> f64 {
        let n = a.width() as isize;
        let c = (n as f64 - 1.0) / 2.0;
        let inside = |r: isize, col: isize| {
            r >= 0 && col >= 0 && r < n && col < n && {
                let (dr, dc) = (r as f64 - c, col as f64 - c);
                (dr * dr + dc * dc).sqrt() <= n as f64 / 2.0
            }
        };
        let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
        let (mut total, mut count) = (0.0, 0.0);
        for r in 0..n {
            for col in 0..n {
                if !inside(r, col) {
                    continue;
                }
                let mut pts = Vec::new();
                for dr in -5..=5isize {
                    for dc in -5..=5isize {
                        if inside(r + dr, col + dc) {
                            let w = (-((dr * dr + dc * dc) as f64) / 4.5).exp();
                            let (rr, cc) = ((r + dr) as usize, (col + dc) as usize);
                            pts.push((w, a.get(rr, cc), b.get(rr, cc)));
                        }
                    }
                }
                let sw: f64 = pts.iter().map(|p| p.0).sum();
                let ma = pts.iter().map(|p| p.0 * p.1).sum::<f64>() / sw;
                let mb = pts.iter().map(|p| p.0 * p.2).sum::<f64>() / sw;
                let va = pts.iter().map(|p| p.0 * (p.1 - ma).powi(2)).sum::<f64>() / sw;
                let vb = pts.iter().map(|p| p.0 * (p.2 - mb).powi(2)).sum::<f64>() / sw;
                let cov = pts
                    .iter()
                    .map(|p| p.0 * (p.1 - ma) * (p.2 - mb))
                    .sum::<f64>()
                    / sw;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
        total / count
    }

    #[test]
    fn ssim_matches_naive_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..3 {
            let (a, b) = (random(16, &mut rng), random(16, &mut rng));
            let l = data_range(&b);
            let got = ssim(&a, &b, None).unwrap();
            assert!((got - naive_ssim(&a, &b, l)).abs() < 1e-8);
        }
    }

    #[test]
    fn ssim_is_symmetric_for_fixed_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (random(20, &mut rng), random(20, &mut rng));
        let ab = ssim(&a, &b, Some(1.0)).unwrap();
        let ba = ssim(&b, &a, Some(1.0)).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn metrics_ignore_pixels_outside_circle(seed in 0u64..1000, junk in -50.0f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (random(16, &mut rng), random(16, &mut rng));
            let mask = ImageGrid::circle_mask(16);
            let outside = |img: &ImageGrid| {
                img.like(img.values().iter().zip(&mask).map(|(v, m)| if *m { *v } else { junk }).collect()).unwrap()
            };
            let (a2, b2) = (outside(&a), outside(&b));
            prop_assert_eq!(psnr(&a, &b, None).unwrap(), psnr(&a2, &b2, None).unwrap());
            prop_assert_eq!(ssim(&a, &b, None).unwrap(), ssim(&a2, &b2, None).unwrap());
        }

        #[test]
        fn shifting_a_smooth_image_lowers_scores(shift in 1usize..4, phase in 0.0f64..6.0) {
            let clean = ImageGrid::from_fn(24, |r, c| (0.4 * r as f64 + phase).sin() * (0.3 * c as f64).cos()).unwrap();
            let moved = ImageGrid::from_fn(24, |r, c| clean.get((r + shift).min(23), c)).unwrap();
            prop_assert!(psnr(&moved, &clean, None).unwrap() < psnr(&clean, &clean, None).unwrap());
            prop_assert!(ssim(&moved, &clean, None).unwrap() < 1.0);
        }
    }
}
