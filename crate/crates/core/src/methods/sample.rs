use crate::error::{Error, Result};
use crate::tomo::{ImageGrid, Sinogram};

/// What a self-supervised loss is allowed to see: an id and noisy data.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub sample_id: u64,
    pub y: Sinogram,
}

/// A measurement plus, optionally, its clean image for evaluation only.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub measurement: Measurement,
    pub x_clean: Option<ImageGrid>,
}

impl TrainingSample {
    pub fn new(sample_id: u64, y: Sinogram, x_clean: Option<ImageGrid>) -> Self {
        Self {
            measurement: Measurement { sample_id, y },
            x_clean,
        }
    }

    pub fn sample_id(&self) -> u64 {
        self.measurement.sample_id
    }

    pub fn y(&self) -> &Sinogram {
        &self.measurement.y
    }

    pub fn clean(&self) -> Result<&ImageGrid> {
        self.x_clean.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "sample {} has no clean reference image",
                self.sample_id()
            ))
        })
    }
}
