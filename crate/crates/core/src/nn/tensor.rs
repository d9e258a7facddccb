use crate::error::{Error, Result};
use crate::tomo::ImageGrid;

/// Dense `channels x rows x cols` array, row-major within each channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::mismatch(
                "Tensor::new",
                format!("{shape:?}"),
                data.len(),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: [1, 1, 1],
            data: vec![v],
        }
    }

    pub fn from_image(image: &ImageGrid) -> Self {
        let w = image.width();
        Self {
            shape: [1, w, w],
            data: image.values().to_vec(),
        }
    }

    pub fn to_image(&self, pixel_size: f64) -> Result<ImageGrid> {
        let [c, h, w] = self.shape;
        if c != 1 || h != w {
            return Err(Error::mismatch(
                "Tensor::to_image",
                "[1, w, w]",
                format!("{:?}", self.shape),
            ));
        }
        ImageGrid::new(w, self.data.clone())?.with_pixel_size(pixel_size)
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    pub fn rows(&self) -> usize {
        self.shape[1]
    }

    pub fn cols(&self) -> usize {
        self.shape[2]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }
}
