//! Image ingestion and noisy-dataset synthesis.

use std::path::Path;

use crate::error::{Error, Result};
use crate::methods::TrainingSample;
use crate::noise::{sample_sinogram_noise, NoiseSpec, RngStream};
use crate::tomo::{radon_forward, ImageGrid, ScanGeometry};

/// Loads every decodable image in `dir`, in filename order, as a unit-range
/// `image_size` square. Files that fail to decode are skipped with a warning.
pub fn ingest_dataset(dir: &Path, image_size: usize) -> Result<Vec<ImageGrid>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut images = Vec::with_capacity(paths.len());
    for path in paths {
        match load_gray(&path) {
            Ok((w, h, values)) => images.push(resize_bilinear(&values, w, h, image_size)?),
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    if images.is_empty() {
        return Err(Error::EmptyDataset(dir.to_path_buf()));
    }
    Ok(images)
}

/// Decodes a grayscale image to unit-range floats. 8-bit and 16-bit inputs
/// both go through the 16-bit path, which maps `v8` to exactly `v8 / 255`.
fn load_gray(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()?
        .into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = img
        .into_raw()
        .into_iter()
        .map(|v| v as f64 / 65535.0)
        .collect();
    Ok((w, h, values))
}

/// Bilinear resampling of a `w x h` row-major image onto a `size x size`
/// grid with pixel centres aligned (`src = (dst + 0.5) * scale - 0.5`) and
/// edge clamping. Equal sizes pass through unchanged.
pub fn resize_bilinear(values: &[f64], w: usize, h: usize, size: usize) -> Result<ImageGrid> {
    if values.len() != w * h || w == 0 || h == 0 {
        return Err(Error::mismatch("resize input", w * h, values.len()));
    }
    if w == size && h == size {
        return ImageGrid::new(size, values.to_vec());
    }
    let axis = |dst: usize, n_src: usize| -> (usize, usize, f64) {
        let pos =
            ((dst as f64 + 0.5) * n_src as f64 / size as f64 - 0.5).clamp(0.0, (n_src - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n_src - 1);
        (lo, hi, pos - lo as f64)
    };
    ImageGrid::from_fn(size, |r, c| {
        let (r0, r1, fr) = axis(r, h);
        let (c0, c1, fc) = axis(c, w);
        let at = |rr: usize, cc: usize| values[rr * w + cc];
        (1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c1))
            + fr * ((1.0 - fc) * at(r1, c0) + fc * at(r1, c1))
    })
}

/// `y_t = A x_t + xi_t` with `xi_t` from the measurement stream of sample
/// `first_id + t`. Clean images are kept for evaluation only.
pub fn synthesize(
    images: &[ImageGrid],
    geom: &ScanGeometry,
    noise: &NoiseSpec,
    first_id: u64,
) -> Result<Vec<TrainingSample>> {
    images
        .iter()
        .enumerate()
        .map(|(t, x)| {
            let id = first_id + t as u64;
            let clean = radon_forward(x, geom)?;
            let xi = sample_sinogram_noise(noise, geom, RngStream::measurement(noise.seed, id))?;
            Ok(TrainingSample::new(id, clean.add(&xi)?, Some(x.clone())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::phantom::random_phantom;

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            ingest_dataset(dir.path(), 8),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn downsizing_averages_blocks() {
        let v: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let out = resize_bilinear(&v, 4, 4, 2).unwrap();
        // Each output pixel sits at the centre of a 2x2 block.
        let want = [
            (0.0 + 1.0 + 4.0 + 5.0) / 4.0,
            (2.0 + 3.0 + 6.0 + 7.0) / 4.0,
            (8.0 + 9.0 + 12.0 + 13.0) / 4.0,
            (10.0 + 11.0 + 14.0 + 15.0) / 4.0,
        ];
        for (a, b) in out.values().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn same_size_passes_through_and_files_load_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let a = image::GrayImage::from_fn(6, 6, |x, y| image::Luma([(x * 40 + y) as u8]));
        let b = image::ImageBuffer::<image::Luma<u16>, _>::from_fn(6, 6, |x, _| {
            image::Luma([x as u16 * 1000])
        });
        b.save(dir.path().join("a.png")).unwrap();
        a.save(dir.path().join("b.pgm")).unwrap();
        std::fs::write(dir.path().join("c.png"), b"not an image").unwrap();
        let images = ingest_dataset(dir.path(), 6).unwrap();
        assert_eq!(images.len(), 2);
        assert_eq!(images[0].get(0, 3), 3000.0 / 65535.0);
        assert_eq!(images[1].get(2, 3), (3 * 40 + 2) as f64 / 255.0);
    }

    #[test]
    fn noiseless_synthesis_is_exact_projection() {
        let geom = ScanGeometry::for_image(16, 16).unwrap();
        let x = random_phantom(16, 1).unwrap();
        let noise = NoiseSpec::new(0.0, 2.0, 3).unwrap();
        let s = synthesize(std::slice::from_ref(&x), &geom, &noise, 5).unwrap();
        assert_eq!(s[0].sample_id(), 5);
        assert_eq!(s[0].y(), &radon_forward(&x, &geom).unwrap());
    }

    #[test]
    fn synthesized_noise_has_filtered_std() {
        let geom = ScanGeometry::for_image(64, 32).unwrap();
        let noise = NoiseSpec::new(5.0, 2.0, 3).unwrap();
        let images: Vec<_> = (0..4).map(|i| random_phantom(32, i).unwrap()).collect();
        let a = synthesize(&images, &geom, &noise, 0).unwrap();
        let b = synthesize(&images, &geom, &noise, 0).unwrap();
        assert_eq!(a, b);
        let (mut ss, mut n) = (0.0, 0.0);
        for (s, x) in a.iter().zip(&images) {
            let r = s.y().sub(&radon_forward(x, &geom).unwrap()).unwrap();
            // Interior entries only; zero padding thins the border.
            let (rows, cols) = (r.rows(), r.cols());
            for i in 6..rows - 6 {
                for j in 6..cols - 6 {
                    ss += r.get(i, j).powi(2);
                    n += 1.0;
                }
            }
        }
        let want = noise.pixel_std().unwrap();
        assert!(((ss / n).sqrt() - want).abs() / want < 0.05);
    }
}
