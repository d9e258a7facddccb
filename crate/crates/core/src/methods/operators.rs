use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::{LinearMap, Tensor};
use crate::tomo::gradient_impl::{adjoint_diff, forward_diff};
use crate::tomo::{
    grad_adjoint, grad_forward, radon_adjoint, radon_forward, Fbp, GradField, ImageGrid,
    ScanGeometry, Sinogram,
};

/// `A` as a tape primitive: `[1, w, w] -> [1, rows, detectors]`.
pub struct RadonMap {
    geometry: ScanGeometry,
    width: usize,
    pixel_size: f64,
}

impl LinearMap for RadonMap {
    fn name(&self) -> &str {
        "radon_forward"
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let img = x.to_image(self.pixel_size)?;
        if img.width() != self.width {
            return Err(Error::mismatch("radon map input", self.width, img.width()));
        }
        let s = radon_forward(&img, &self.geometry)?;
        Tensor::new([1, s.rows(), s.cols()], s.into_values())
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        let s = Sinogram::new(self.geometry.clone(), y.data().to_vec())?;
        let img = radon_adjoint(&s, self.width, self.pixel_size)?;
        Ok(Tensor::from_image(&img))
    }
}

/// `W = grad` as a tape primitive: `[1, r, d] -> [2, r, d]` (angle, detector).
pub struct GradientMap;

impl LinearMap for GradientMap {
    fn name(&self) -> &str {
        "grad_forward"
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let [c, r, d] = x.shape();
        if c != 1 {
            return Err(Error::mismatch("gradient map input channels", 1, c));
        }
        let mut out = vec![0.0; 2 * r * d];
        let (da, dd) = out.split_at_mut(r * d);
        forward_diff(x.data(), r, d, da, dd);
        Tensor::new([2, r, d], out)
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        let [c, r, d] = y.shape();
        if c != 2 {
            return Err(Error::mismatch("gradient map adjoint channels", 2, c));
        }
        let (da, dd) = y.data().split_at(r * d);
        let mut out = vec![0.0; r * d];
        adjoint_diff(da, dd, r, d, &mut out);
        Tensor::new([1, r, d], out)
    }
}

/// The fixed operators of one experiment geometry: `A`, `B#` and `W = grad`.
#[derive(Clone)]
pub struct ReconOperators {
    width: usize,
    pixel_size: f64,
    fbp: Fbp,
    radon: Arc<RadonMap>,
    gradient: Arc<GradientMap>,
}

impl ReconOperators {
    pub fn new(geometry: &ScanGeometry, width: usize) -> Result<Self> {
        Self::with_pixel_size(geometry, width, 1.0)
    }

    pub fn with_pixel_size(geometry: &ScanGeometry, width: usize, pixel_size: f64) -> Result<Self> {
        let fbp = Fbp::new(geometry, width, pixel_size)?;
        Ok(Self {
            width,
            pixel_size,
            fbp,
            radon: Arc::new(RadonMap {
                geometry: geometry.clone(),
                width,
                pixel_size,
            }),
            gradient: Arc::new(GradientMap),
        })
    }

    pub fn geometry(&self) -> &ScanGeometry {
        self.fbp.geometry()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn radon_map(&self) -> Arc<dyn LinearMap> {
        self.radon.clone()
    }

    pub fn gradient_map(&self) -> Arc<dyn LinearMap> {
        self.gradient.clone()
    }

    pub fn forward(&self, x: &ImageGrid) -> Result<Sinogram> {
        radon_forward(x, self.geometry())
    }

    pub fn fbp(&self, y: &Sinogram) -> Result<ImageGrid> {
        self.fbp.apply(y)
    }

    pub fn grad(&self, y: &Sinogram) -> GradField {
        grad_forward(y)
    }

    pub fn grad_adjoint(&self, g: &GradField, like: &Sinogram) -> Result<Sinogram> {
        grad_adjoint(g, like)
    }
}

/// Gradient-field layout used by [`GradientMap`]: angle differences first.
pub(crate) fn grad_tensor(g: &GradField) -> Result<Tensor> {
    let mut data = Vec::with_capacity(2 * g.d_angle.len());
    data.extend_from_slice(&g.d_angle);
    data.extend_from_slice(&g.d_detector);
    Tensor::new([2, g.rows(), g.cols()], data)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn tape_maps_agree_with_operators() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = ScanGeometry::for_image(12, 16).unwrap();
        let ops = ReconOperators::new(&g, 16).unwrap();
        let x = ImageGrid::from_fn(16, |_, _| rng.random_range(0.0..1.0)).unwrap();
        let a = ops.radon_map().apply(&Tensor::from_image(&x)).unwrap();
        let s = ops.forward(&x).unwrap();
        assert_eq!(a.data(), s.values());
        let gm = ops.gradient_map().apply(&a).unwrap();
        assert_eq!(gm, grad_tensor(&ops.grad(&s)).unwrap());
        let back = ops.gradient_map().adjoint(&gm).unwrap();
        let want = ops.grad_adjoint(&ops.grad(&s), &s).unwrap();
        assert_eq!(back.data(), want.values());
    }
}
