//! Binary Netpbm reader/writer: P5 (gray) and P6 (RGB), maxval 255 only.
//!
//! Headers are written as `P5\n<width> <height>\n255\n` followed by raw
//! bytes. The reader accepts any whitespace between header fields and `#`
//! comments before the maxval, as the Netpbm format allows.

use std::fs;
use std::path::Path;

use super::{GrayImage, RgbImage};
use crate::error::{Error, Result};

/// A decoded Netpbm file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AnyImage {
    Gray(GrayImage),
    Rgb(RgbImage),
}

impl AnyImage {
    /// Gray images pass through; RGB images are converted with BT.601 weights.
    pub fn into_gray(self) -> GrayImage {
        match self {
            AnyImage::Gray(g) => g,
            AnyImage::Rgb(c) => c.to_gray(),
        }
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<AnyImage> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&data)
}

pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    load_image(path).map(AnyImage::into_gray)
}

pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_gray(img)).map_err(|e| Error::io(path, e))
}

pub fn encode_gray(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

pub fn encode_rgb(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().flatten());
    out
}

pub fn decode(data: &[u8]) -> Result<AnyImage> {
    let mut cursor = Cursor { data, pos: 0 };
    let magic = cursor.token()?;
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(Error::MalformedHeader(format!(
                "unknown magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = cursor.number("width")?;
    let height = cursor.number("height")?;
    let maxval = cursor.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader(format!("zero dimension {width}x{height}")));
    }
    if maxval != 255 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    // Exactly one whitespace byte separates the maxval from the raster.
    match data.get(cursor.pos) {
        Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
        _ => return Err(Error::MalformedHeader("missing separator after maxval".into())),
    }
    let (width, height) = (width as usize, height as usize);
    let expected = width * height * channels;
    let raster = &data[cursor.pos..];
    if raster.len() < expected {
        return Err(Error::TruncatedPixels {
            expected,
            found: raster.len(),
        });
    }
    let raster = &raster[..expected];
    if channels == 1 {
        Ok(AnyImage::Gray(GrayImage::new(height, width, raster.to_vec())?))
    } else {
        let pixels = raster.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect();
        Ok(AnyImage::Rgb(RgbImage::new(height, width, pixels)?))
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.data.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.data.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&b) = self.data.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::MalformedHeader("unexpected end of header".into()));
        }
        Ok(&self.data[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(|| {
                Error::MalformedHeader(format!("bad {what} {:?}", String::from_utf8_lossy(tok)))
            })
    }
}
