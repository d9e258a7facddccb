use crate::error::{Error, Result};

/// Square image on a regular pixel grid, stored row-major.
///
/// Pixel `(row, col)` has its center at
/// `x = (col - c) * pixel_size`, `y = (c - row) * pixel_size` with
/// `c = (width - 1) / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    width: usize,
    pixel_size: f64,
    values: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, values: Vec<f64>) -> Result<Self> {
        if width < 2 {
            return Err(Error::InvalidArgument(format!(
                "image width must be at least 2, got {width}"
            )));
        }
        if values.len() != width * width {
            return Err(Error::mismatch(
                "ImageGrid::new",
                width * width,
                values.len(),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("image pixel {pos}")));
        }
        Ok(Self {
            width,
            pixel_size: 1.0,
            values,
        })
    }

    pub fn zeros(width: usize) -> Self {
        assert!(width >= 2, "image width must be at least 2");
        Self {
            width,
            pixel_size: 1.0,
            values: vec![0.0; width * width],
        }
    }

    pub fn from_fn(width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(width * width);
        for r in 0..width {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::new(width, values)
    }

    pub fn with_pixel_size(mut self, pixel_size: f64) -> Result<Self> {
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pixel size must be positive, got {pixel_size}"
            )));
        }
        self.pixel_size = pixel_size;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
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

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Same grid, new values.
    pub fn like(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.width, values)?.with_pixel_size(self.pixel_size)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.like(self.values.iter().map(|&v| f(v)).collect())
    }

    /// `self + scale * other`
    pub fn add_scaled(&self, other: &ImageGrid, scale: f64) -> Result<Self> {
        self.check_same_shape(other)?;
        self.like(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + scale * b)
                .collect(),
        )
    }

    pub fn check_same_shape(&self, other: &ImageGrid) -> Result<()> {
        if self.width != other.width {
            return Err(Error::mismatch("image width", self.width, other.width));
        }
        Ok(())
    }

    /// Pixels whose centers lie inside the inscribed reconstruction circle.
    pub fn circle_mask(width: usize) -> Vec<bool> {
        let c = (width as f64 - 1.0) / 2.0;
        let r2 = (width as f64 / 2.0).powi(2);
        (0..width * width)
            .map(|k| {
                let (r, col) = ((k / width) as f64, (k % width) as f64);
                (r - c).powi(2) + (col - c).powi(2) <= r2
            })
            .collect()
    }

    pub fn dot(&self, other: &ImageGrid) -> f64 {
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
