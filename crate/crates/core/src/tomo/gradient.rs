use crate::error::{Error, Result};

use super::Sinogram;

/// Forward differences of a sinogram along both axes.
///
/// `d_angle[a][d] = u[a+1][d] - u[a][d]` and `d_detector[a][d] = u[a][d+1] - u[a][d]`,
/// with the last row (resp. column) set to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct GradField {
    rows: usize,
    cols: usize,
    pub d_angle: Vec<f64>,
    pub d_detector: Vec<f64>,
}

impl GradField {
    pub fn new(rows: usize, cols: usize, d_angle: Vec<f64>, d_detector: Vec<f64>) -> Result<Self> {
        if d_angle.len() != rows * cols || d_detector.len() != rows * cols {
            return Err(Error::mismatch(
                "GradField::new",
                rows * cols,
                format!("{}/{}", d_angle.len(), d_detector.len()),
            ));
        }
        Ok(Self {
            rows,
            cols,
            d_angle,
            d_detector,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            d_angle: vec![0.0; rows * cols],
            d_detector: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dot(&self, other: &GradField) -> f64 {
        let a: f64 = self
            .d_angle
            .iter()
            .zip(&other.d_angle)
            .map(|(x, y)| x * y)
            .sum();
        let d: f64 = self
            .d_detector
            .iter()
            .zip(&other.d_detector)
            .map(|(x, y)| x * y)
            .sum();
        a + d
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }
}

/// Forward differences on a raw `rows x cols` buffer, written into `d_angle`
/// and `d_detector`.
pub(crate) fn forward_diff(
    u: &[f64],
    rows: usize,
    cols: usize,
    d_angle: &mut [f64],
    d_detector: &mut [f64],
) {
    for a in 0..rows {
        for d in 0..cols {
            let k = a * cols + d;
            d_angle[k] = if a + 1 < rows {
                u[k + cols] - u[k]
            } else {
                0.0
            };
            d_detector[k] = if d + 1 < cols { u[k + 1] - u[k] } else { 0.0 };
        }
    }
}

/// Transpose of [`forward_diff`] (negative divergence), written into `out`.
pub(crate) fn adjoint_diff(
    d_angle: &[f64],
    d_detector: &[f64],
    rows: usize,
    cols: usize,
    out: &mut [f64],
) {
    for a in 0..rows {
        for d in 0..cols {
            let k = a * cols + d;
            let mut v = 0.0;
            if a + 1 < rows {
                v -= d_angle[k];
            }
            if a > 0 {
                v += d_angle[k - cols];
            }
            if d + 1 < cols {
                v -= d_detector[k];
            }
            if d > 0 {
                v += d_detector[k - 1];
            }
            out[k] = v;
        }
    }
}

pub fn grad_forward(sino: &Sinogram) -> GradField {
    let (rows, cols) = (sino.rows(), sino.cols());
    let mut g = GradField::zeros(rows, cols);
    forward_diff(sino.values(), rows, cols, &mut g.d_angle, &mut g.d_detector);
    g
}

/// `grad^T g`, placed on the geometry of `like`.
pub fn grad_adjoint(g: &GradField, like: &Sinogram) -> Result<Sinogram> {
    if g.rows != like.rows() || g.cols != like.cols() {
        return Err(Error::mismatch(
            "grad_adjoint",
            format!("{}x{}", like.rows(), like.cols()),
            format!("{}x{}", g.rows, g.cols),
        ));
    }
    let mut out = vec![0.0; g.rows * g.cols];
    adjoint_diff(&g.d_angle, &g.d_detector, g.rows, g.cols, &mut out);
    Sinogram::new(like.geometry().clone(), out)
}
