use crate::error::{Error, Result};

use super::ScanGeometry;

/// Line-integral measurements, `geometry.rows() x num_detectors`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    geometry: ScanGeometry,
    values: Vec<f64>,
}

impl Sinogram {
    pub fn new(geometry: ScanGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.sinogram_len() {
            return Err(Error::mismatch(
                "Sinogram::new",
                format!("{}x{}", geometry.rows(), geometry.num_detectors()),
                values.len(),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sinogram entry {pos}")));
        }
        Ok(Self { geometry, values })
    }

    pub fn zeros(geometry: ScanGeometry) -> Self {
        let values = vec![0.0; geometry.sinogram_len()];
        Self { geometry, values }
    }

    pub fn geometry(&self) -> &ScanGeometry {
        &self.geometry
    }

    pub fn rows(&self) -> usize {
        self.geometry.rows()
    }

    pub fn cols(&self) -> usize {
        self.geometry.num_detectors()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, det: usize) -> f64 {
        self.values[row * self.cols() + det]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let n = self.cols();
        &self.values[row * n..(row + 1) * n]
    }

    pub fn check_geometry(&self, geometry: &ScanGeometry) -> Result<()> {
        if &self.geometry != geometry {
            return Err(Error::mismatch(
                "sinogram geometry",
                format!("{}x{}", geometry.rows(), geometry.num_detectors()),
                format!("{}x{}", self.rows(), self.cols()),
            ));
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &Sinogram) -> Result<()> {
        if self.rows() != other.rows() || self.cols() != other.cols() {
            return Err(Error::mismatch(
                "sinogram shape",
                format!("{}x{}", self.rows(), self.cols()),
                format!("{}x{}", other.rows(), other.cols()),
            ));
        }
        Ok(())
    }

    /// `a * self + b * other`, keeping this sinogram's geometry.
    pub fn combine(&self, a: f64, other: &Sinogram, b: f64) -> Result<Sinogram> {
        self.check_same_shape(other)?;
        Sinogram::new(
            self.geometry.clone(),
            self.values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        )
    }

    pub fn add(&self, other: &Sinogram) -> Result<Sinogram> {
        self.combine(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &Sinogram) -> Result<Sinogram> {
        self.combine(1.0, other, -1.0)
    }

    /// Row selection onto a geometry measuring a subset of this sinogram's angles.
    pub fn restrict(&self, target: &ScanGeometry) -> Result<Sinogram> {
        if target.num_angles() != self.geometry.num_angles()
            || target.num_detectors() != self.cols()
            || target.detector_spacing() != self.geometry.detector_spacing()
        {
            return Err(Error::mismatch(
                "Sinogram::restrict",
                "geometry over the same angle grid and detector row",
                "incompatible geometry",
            ));
        }
        let have = self.geometry.active_angles();
        let mut values = Vec::with_capacity(target.sinogram_len());
        for angle in target.active_angles() {
            let row = have.binary_search(&angle).map_err(|_| {
                Error::InvalidArgument(format!("angle {angle} is not measured in source sinogram"))
            })?;
            values.extend_from_slice(self.row(row));
        }
        Sinogram::new(target.clone(), values)
    }

    pub fn dot(&self, other: &Sinogram) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}
