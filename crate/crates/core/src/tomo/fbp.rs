use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::Result;

use super::{radon_adjoint, ImageGrid, ScanGeometry, Sinogram};

/// Filtered backprojection for a fixed geometry and image grid.
///
/// Each projection is zero-padded to the next power of two at least twice the
/// detector count and filtered with the Ram-Lak ramp. The ramp spectrum is the
/// transform of the band-limited spatial kernel (`1/(4 tau^2)` at 0,
/// `-1/(pi n tau)^2` at odd `n`), which keeps the zero-frequency gain exact.
#[derive(Clone)]
pub struct Fbp {
    geometry: ScanGeometry,
    width: usize,
    pixel_size: f64,
    padded: usize,
    filter: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fbp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fbp")
            .field("geometry", &self.geometry)
            .field("width", &self.width)
            .field("padded", &self.padded)
            .finish()
    }
}

impl Fbp {
    pub fn new(geometry: &ScanGeometry, width: usize, pixel_size: f64) -> Result<Self> {
        geometry.check_covers(width, pixel_size)?;
        let det = geometry.num_detectors();
        let padded = (2 * det).next_power_of_two().max(64);
        let tau = geometry.detector_spacing();

        let mut kernel = vec![Complex::new(0.0, 0.0); padded];
        kernel[0].re = 1.0 / (4.0 * tau * tau);
        for n in (1..padded / 2).step_by(2) {
            let v = -1.0 / (PI * n as f64 * tau).powi(2);
            kernel[n].re = v;
            kernel[padded - n].re = v;
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(padded);
        let inverse = planner.plan_fft_inverse(padded);
        forward.process(&mut kernel);
        // Symmetric real kernel: the spectrum is real. Fold in the convolution
        // step tau and the 1/N of the unnormalized inverse transform.
        let filter = kernel.iter().map(|c| c.re * tau / padded as f64).collect();

        Ok(Self {
            geometry: geometry.clone(),
            width,
            pixel_size,
            padded,
            filter,
            forward,
            inverse,
        })
    }

    pub fn geometry(&self) -> &ScanGeometry {
        &self.geometry
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    /// Ramp-filters every projection row.
    pub fn filter(&self, sino: &Sinogram) -> Result<Sinogram> {
        sino.check_geometry(&self.geometry)?;
        let det = sino.cols();
        let n = self.padded;
        // All rows are transformed in one call; rustfft splits the buffer
        // into consecutive length-n transforms.
        let mut buf = vec![Complex::new(0.0, 0.0); sino.rows() * n];
        for (chunk, row) in buf.chunks_mut(n).zip(sino.values().chunks(det)) {
            for (b, &v) in chunk.iter_mut().zip(row) {
                b.re = v;
            }
        }
        self.forward.process(&mut buf);
        for chunk in buf.chunks_mut(n) {
            for (b, &h) in chunk.iter_mut().zip(&self.filter) {
                *b *= h;
            }
        }
        self.inverse.process(&mut buf);
        let out = buf
            .chunks(n)
            .flat_map(|chunk| chunk[..det].iter().map(|c| c.re))
            .collect();
        Sinogram::new(self.geometry.clone(), out)
    }

    /// `B# y`: ramp filter, backprojection, `pi / rows` angular weight.
    pub fn apply(&self, sino: &Sinogram) -> Result<ImageGrid> {
        let filtered = self.filter(sino)?;
        let back = radon_adjoint(&filtered, self.width, self.pixel_size)?;
        let scale = PI / self.geometry.rows() as f64 * self.geometry.detector_spacing()
            / (self.pixel_size * self.pixel_size);
        back.map(|v| v * scale)
    }
}

/// One-shot filtered backprojection onto a `width`-pixel unit grid.
pub fn fbp(sino: &Sinogram, width: usize) -> Result<ImageGrid> {
    Fbp::new(sino.geometry(), width, 1.0)?.apply(sino)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sinogram_gives_zero_image() {
        let g = ScanGeometry::for_image(16, 32).unwrap();
        let img = fbp(&Sinogram::zeros(g), 32).unwrap();
        assert!(img.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_filter_removes_constant_projection_mass() {
        // The band-limited ramp has zero gain at DC up to the truncation tail.
        let g = ScanGeometry::new(1, 64, 1.0).unwrap();
        let fbp = Fbp::new(&g, 16, 1.0).unwrap();
        assert!(fbp.filter[0].abs() < 1e-2 * fbp.filter[fbp.padded / 2].abs());
    }

    #[test]
    fn fbp_is_linear() {
        let g = ScanGeometry::for_image(8, 16).unwrap();
        let f = Fbp::new(&g, 16, 1.0).unwrap();
        let a: Vec<f64> = (0..g.sinogram_len())
            .map(|k| (k as f64 * 0.37).sin())
            .collect();
        let b: Vec<f64> = (0..g.sinogram_len())
            .map(|k| (k as f64 * 0.11).cos())
            .collect();
        let sa = Sinogram::new(g.clone(), a).unwrap();
        let sb = Sinogram::new(g.clone(), b).unwrap();
        let lhs = f.apply(&sa.combine(2.0, &sb, -3.0).unwrap()).unwrap();
        let rhs = f
            .apply(&sa)
            .unwrap()
            .map(|v| 2.0 * v)
            .unwrap()
            .add_scaled(&f.apply(&sb).unwrap(), -3.0)
            .unwrap();
        for (x, y) in lhs.values().iter().zip(rhs.values()) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}
