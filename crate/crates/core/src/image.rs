//! 8-bit RGB images and PNG I/O.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

pub type Rgb8 = [u8; 3];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb8>,
}

#[derive(Debug, thiserror::Error)]
#[error("{path}: {msg}")]
pub struct ImageIoError {
    pub path: String,
    pub msg: String,
}

impl Image {
    pub fn filled(width: usize, height: usize, c: Rgb8) -> Self {
        Self {
            width,
            height,
            pixels: vec![c; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: Rgb8) {
        self.pixels[y * self.width + x] = c;
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImageIoError> {
        let path = path.as_ref();
        let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        let buf: RgbImage = ImageBuffer::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions");
        buf.save(path).map_err(|e| io_err(path, e))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, ImageIoError> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| io_err(path, e))?.to_rgb8();
        Ok(Self {
            width: img.width() as usize,
            height: img.height() as usize,
            pixels: img.pixels().map(|&Rgb(p)| p).collect(),
        })
    }
}

pub(crate) fn io_err(path: &Path, e: impl std::fmt::Display) -> ImageIoError {
    ImageIoError {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

/// `[0,1]` → `u8` with rounding and clamping.
#[inline]
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
