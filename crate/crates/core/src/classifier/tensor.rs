use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Dense row-major array of doubles.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {count} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("tensor contains non-finite values".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let count = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; count],
        }
    }

    /// `[1, H, W]` tensor with pixel values scaled to `[0, 1]`.
    pub fn from_gray(img: &GrayImage) -> Self {
        Self {
            shape: vec![1, img.height(), img.width()],
            data: img.pixels().iter().map(|&p| p as f64 / 255.0).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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
}
