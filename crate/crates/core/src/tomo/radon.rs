//! Joseph-style projector: each ray is sampled once per pixel row (or column,
//! whichever it crosses more steeply) and the image is linearly interpolated
//! between the two neighbouring pixels of that row. Forward and adjoint share
//! the same traversal, so they are an exact transpose pair.

use crate::error::{Error, Result};

use super::{ImageGrid, ScanGeometry, Sinogram};

/// For a fractional pixel coordinate `u`, returns `(floor(u) + 1, u - floor(u))`
/// when at least one of the two neighbours `floor(u)`, `floor(u) + 1` lies in
/// `0..n`. Truncation replaces `floor`, which is a libm call on baseline x86-64.
#[inline]
fn split(u: f64, n: f64) -> Option<(usize, f64)> {
    // Range-check the shifted value itself: `u + 1` can round up to `n + 1`.
    let t = u + 1.0;
    if t > 0.0 && t < n + 1.0 {
        let hi = t as usize;
        Some((hi, t - hi as f64))
    } else {
        None
    }
}

/// Calls `visit(pixel_index, weight)` for every interpolation weight of the ray
/// at angle `theta` and detector offset `s`.
#[inline]
fn trace_ray(width: usize, pixel_size: f64, theta: f64, s: f64, mut visit: impl FnMut(usize, f64)) {
    let (sin, cos) = theta.sin_cos();
    let c = (width as f64 - 1.0) / 2.0;
    let n = width as f64;
    if cos.abs() >= sin.abs() {
        // Mostly vertical ray: one sample per row, interpolate across columns.
        // x(y) = s / cos - y * tan, with y = (c - row) * pixel_size
        let step = pixel_size / cos.abs();
        let tan = sin / cos;
        let u0 = s / (cos * pixel_size) - c * tan + c;
        for row in 0..width {
            let u = u0 + row as f64 * tan;
            if let Some((j1, f)) = split(u, n) {
                let base = row * width;
                if j1 > 0 {
                    visit(base + j1 - 1, (1.0 - f) * step);
                }
                if j1 < width {
                    visit(base + j1, f * step);
                }
            }
        }
    } else {
        // Mostly horizontal ray: one sample per column, interpolate across rows.
        // y(x) = s / sin - x * cot, with x = (col - c) * pixel_size
        let step = pixel_size / sin.abs();
        let cot = cos / sin;
        let v0 = c - s / (sin * pixel_size) - c * cot;
        for col in 0..width {
            let v = v0 + col as f64 * cot;
            if let Some((i1, f)) = split(v, n) {
                if i1 > 0 {
                    visit((i1 - 1) * width + col, (1.0 - f) * step);
                }
                if i1 < width {
                    visit(i1 * width + col, f * step);
                }
            }
        }
    }
}

fn check(width: usize, pixel_size: f64, geom: &ScanGeometry) -> Result<()> {
    if width < 2 {
        return Err(Error::InvalidArgument(format!("image width {width} < 2")));
    }
    geom.check_covers(width, pixel_size)
}

/// Discrete parallel-beam Radon transform `A x`.
pub fn radon_forward(image: &ImageGrid, geom: &ScanGeometry) -> Result<Sinogram> {
    check(image.width(), image.pixel_size(), geom)?;
    let width = image.width();
    let ps = image.pixel_size();
    let px = image.values();
    let det = geom.num_detectors();
    let mut out = vec![0.0; geom.sinogram_len()];
    for (row, angle) in geom.active_angles().into_iter().enumerate() {
        let theta = geom.angle(angle);
        for (d, slot) in out[row * det..(row + 1) * det].iter_mut().enumerate() {
            let mut acc = 0.0;
            trace_ray(width, ps, theta, geom.detector_offset(d), |k, w| {
                acc += w * px[k]
            });
            *slot = acc;
        }
    }
    Sinogram::new(geom.clone(), out)
}

/// Exact transpose `A^T u` of [`radon_forward`] on a `width`-pixel grid.
pub fn radon_adjoint(sino: &Sinogram, width: usize, pixel_size: f64) -> Result<ImageGrid> {
    let geom = sino.geometry();
    check(width, pixel_size, geom)?;
    let det = geom.num_detectors();
    let vals = sino.values();
    let mut img = vec![0.0; width * width];
    for (row, angle) in geom.active_angles().into_iter().enumerate() {
        let theta = geom.angle(angle);
        for d in 0..det {
            let u = vals[row * det + d];
            if u == 0.0 {
                continue;
            }
            trace_ray(width, pixel_size, theta, geom.detector_offset(d), |k, w| {
                img[k] += w * u
            });
        }
    }
    ImageGrid::new(width, img)?.with_pixel_size(pixel_size)
}
