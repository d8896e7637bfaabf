//! Raster types shared by every stage of the pipeline.
//!
//! [`GrayImage`] is the unit of inspection: 8-bit, single channel, row-major.
//! [`RealPlane`] carries the floating-point intermediates of intensity
//! adjustment. File I/O lives in [`pnm`].

pub mod pnm;

use crate::error::{Error, Result};

pub use pnm::{load_gray, load_image, save_image, AnyImage};

/// 8-bit single-channel raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::InvalidDimensions { height, width });
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Builds an image by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.pixels[row * self.width + col] = value;
    }

    /// Arithmetic mean of all intensities.
    pub fn mean(&self) -> f64 {
        let sum: u64 = self.pixels.iter().map(|&p| p as u64).sum();
        sum as f64 / self.pixels.len() as f64
    }

    pub fn to_plane(&self) -> RealPlane {
        RealPlane {
            height: self.height,
            width: self.width,
            values: self.pixels.iter().map(|&p| p as f64).collect(),
        }
    }

    /// Copies the `height`x`width` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.height || col + width > self.width || height == 0 || width == 0 {
            return Err(Error::InvalidDimensions { height, width });
        }
        let mut pixels = Vec::with_capacity(height * width);
        for r in row..row + height {
            let start = r * self.width + col;
            pixels.extend_from_slice(&self.pixels[start..start + width]);
        }
        Self::new(height, width, pixels)
    }

    /// Bilinear resampling with half-pixel-centre mapping
    /// `src = (dst + 0.5) * in / out - 0.5`, clamped at the edges.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Self> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::InvalidDimensions {
                height: out_h,
                width: out_w,
            });
        }
        if out_h == self.height && out_w == self.width {
            return Ok(self.clone());
        }
        let rows = sample_positions(self.height, out_h);
        let cols = sample_positions(self.width, out_w);
        let mut pixels = Vec::with_capacity(out_h * out_w);
        for &(r0, r1, fr) in &rows {
            for &(c0, c1, fc) in &cols {
                let p00 = self.get(r0, c0) as f64;
                let p01 = self.get(r0, c1) as f64;
                let p10 = self.get(r1, c0) as f64;
                let p11 = self.get(r1, c1) as f64;
                let top = p00 + (p01 - p00) * fc;
                let bottom = p10 + (p11 - p10) * fc;
                let v = top + (bottom - top) * fr;
                pixels.push(quantize(v));
            }
        }
        Self::new(out_h, out_w, pixels)
    }
}

fn sample_positions(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    let last = (input - 1) as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Rounds half away from zero and clamps into the 8-bit range.
#[inline]
pub fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Three-channel 8-bit raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::InvalidDimensions { height, width });
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    /// ITU-R BT.601 luma: `round(0.299 r + 0.587 g + 0.114 b)`.
    pub fn to_gray(&self) -> GrayImage {
        let pixels = self
            .pixels
            .iter()
            .map(|&[r, g, b]| quantize(0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64))
            .collect();
        GrayImage {
            height: self.height,
            width: self.width,
            pixels,
        }
    }
}

/// Free-function form of [`RgbImage::to_gray`].
pub fn rgb_to_gray(img: &RgbImage) -> GrayImage {
    img.to_gray()
}

/// Matrix of finite doubles, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RealPlane {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl RealPlane {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::InvalidDimensions { height, width });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("plane contains non-finite values".into()));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RealPlane {
        RealPlane {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Rounds and clamps every value into an 8-bit image.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            height: self.height,
            width: self.width,
            pixels: self.values.iter().map(|&v| quantize(v)).collect(),
        }
    }
}

/// Anything with a well-defined mean intensity.
pub trait MeanIntensity {
    fn mean_intensity(&self) -> f64;
}

impl MeanIntensity for GrayImage {
    fn mean_intensity(&self) -> f64 {
        self.mean()
    }
}

impl MeanIntensity for RealPlane {
    fn mean_intensity(&self) -> f64 {
        self.mean()
    }
}

pub fn mean_intensity<T: MeanIntensity + ?Sized>(p: &T) -> f64 {
    p.mean_intensity()
}
