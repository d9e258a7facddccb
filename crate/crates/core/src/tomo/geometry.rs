use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parallel-beam acquisition over the half circle.
///
/// Angle `k` is `k * PI / num_angles`. An optional `angle_subset` restricts the
/// measured rows (sparse-view mode and angle splits); sinograms under such a
/// geometry hold exactly the selected rows, in increasing order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanGeometry {
    num_angles: usize,
    num_detectors: usize,
    detector_spacing: f64,
    angle_subset: Option<Vec<usize>>,
}

impl ScanGeometry {
    pub fn new(num_angles: usize, num_detectors: usize, detector_spacing: f64) -> Result<Self> {
        if num_angles == 0 || num_detectors == 0 {
            return Err(Error::InvalidArgument(format!(
                "geometry needs at least one angle and detector, got {num_angles}x{num_detectors}"
            )));
        }
        if !(detector_spacing > 0.0 && detector_spacing.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "detector spacing must be positive, got {detector_spacing}"
            )));
        }
        Ok(Self {
            num_angles,
            num_detectors,
            detector_spacing,
            angle_subset: None,
        })
    }

    /// Geometry with the default detector row for a `width`-pixel image of unit
    /// pixel size.
    pub fn for_image(num_angles: usize, width: usize) -> Result<Self> {
        Self::new(num_angles, Self::default_detectors(width), 1.0)
    }

    /// `ceil(sqrt(2) * width)` rounded up to an even count.
    pub fn default_detectors(width: usize) -> usize {
        let n = (std::f64::consts::SQRT_2 * width as f64).ceil() as usize;
        n + n % 2
    }

    /// Keep only the listed angle indices (must be strictly increasing).
    pub fn with_subset(mut self, subset: Vec<usize>) -> Result<Self> {
        if subset.is_empty() {
            return Err(Error::InvalidArgument("empty angle subset".into()));
        }
        if subset.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "angle subset must be strictly increasing".into(),
            ));
        }
        if let Some(&last) = subset.last() {
            if last >= self.num_angles {
                return Err(Error::InvalidArgument(format!(
                    "angle index {last} out of range for {} angles",
                    self.num_angles
                )));
            }
        }
        self.angle_subset = Some(subset);
        Ok(self)
    }

    /// Sparse-view restriction to `count` equidistant angles of the full set.
    pub fn sparse(self, count: usize) -> Result<Self> {
        if count == 0 || !self.num_angles.is_multiple_of(count) {
            return Err(Error::Config(format!(
                "sparse angle count {count} must divide {}",
                self.num_angles
            )));
        }
        let stride = self.num_angles / count;
        let subset = (0..count).map(|k| k * stride).collect();
        self.with_subset(subset)
    }

    /// The `part`-th of `parts` interleaved subsets of the currently active rows.
    pub fn interleaved_split(&self, parts: usize, part: usize) -> Result<Self> {
        let active = self.active_angles();
        if parts == 0 || !active.len().is_multiple_of(parts) {
            return Err(Error::Config(format!(
                "split count {parts} must divide the {} measured angles",
                active.len()
            )));
        }
        if part >= parts {
            return Err(Error::InvalidArgument(format!(
                "split index {part} out of range for {parts} splits"
            )));
        }
        let subset = active.into_iter().skip(part).step_by(parts).collect();
        Self {
            angle_subset: None,
            ..self.clone()
        }
        .with_subset(subset)
    }

    /// Same detector row, all angles measured.
    pub fn full(&self) -> Self {
        Self {
            angle_subset: None,
            ..self.clone()
        }
    }

    pub fn num_angles(&self) -> usize {
        self.num_angles
    }

    pub fn num_detectors(&self) -> usize {
        self.num_detectors
    }

    pub fn detector_spacing(&self) -> f64 {
        self.detector_spacing
    }

    pub fn angle_subset(&self) -> Option<&[usize]> {
        self.angle_subset.as_deref()
    }

    pub fn angle(&self, index: usize) -> f64 {
        index as f64 * PI / self.num_angles as f64
    }

    /// Indices of the measured angles, in row order.
    pub fn active_angles(&self) -> Vec<usize> {
        match &self.angle_subset {
            Some(s) => s.clone(),
            None => (0..self.num_angles).collect(),
        }
    }

    /// Number of measured rows.
    pub fn rows(&self) -> usize {
        self.angle_subset
            .as_ref()
            .map_or(self.num_angles, |s| s.len())
    }

    pub fn sinogram_len(&self) -> usize {
        self.rows() * self.num_detectors
    }

    /// Signed offset of detector `d` from the rotation axis.
    pub fn detector_offset(&self, d: usize) -> f64 {
        (d as f64 - (self.num_detectors as f64 - 1.0) / 2.0) * self.detector_spacing
    }

    /// Fails unless the detector row spans the image diagonal.
    pub fn check_covers(&self, width: usize, pixel_size: f64) -> Result<()> {
        let span = self.num_detectors as f64 * self.detector_spacing;
        let diagonal = std::f64::consts::SQRT_2 * width as f64 * pixel_size;
        if span + 1e-9 < diagonal {
            return Err(Error::mismatch(
                "detector coverage",
                format!("span >= {diagonal:.3}"),
                format!("{span:.3}"),
            ));
        }
        Ok(())
    }
}
