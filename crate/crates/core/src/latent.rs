//! Channel-major working tensors and the binary inpainting mask.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ShapeError {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    Mismatch { left: [usize; 3], right: [usize; 3] },
    #[error("mask is {mask:?} but latent spatial shape is {latent:?}")]
    Mask {
        mask: [usize; 2],
        latent: [usize; 2],
    },
    #[error("buffer of length {len} does not match shape {shape:?}")]
    Length { len: usize, shape: [usize; 3] },
}

/// A `C×h×w` tensor stored row-major (channel, row, column).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl Latent {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: [usize; 3], value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<f64>) -> Result<Self, ShapeError> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(ShapeError::Length {
                len: data.len(),
                shape,
            });
        }
        Ok(Self { shape, data })
    }

    /// Independent standard normal entries.
    pub fn gaussian<R: Rng + ?Sized>(shape: [usize; 3], rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    pub fn height(&self) -> usize {
        self.shape[1]
    }

    pub fn width(&self) -> usize {
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

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.shape[1] + y) * self.shape[2] + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = (c * self.shape[1] + y) * self.shape[2] + x;
        self.data[i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_same_shape(&self, other: &Latent) -> Result<(), ShapeError> {
        if self.shape != other.shape {
            return Err(ShapeError::Mismatch {
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(())
    }

    /// `a·self + b·other`, elementwise.
    pub fn lincomb(&self, a: f64, other: &Latent, b: f64) -> Result<Latent, ShapeError> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Latent {
            shape: self.shape,
            data,
        })
    }

    pub fn squared_distance(&self, other: &Latent) -> Result<f64, ShapeError> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum())
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

/// Latent-resolution binary mask; `true` marks an unknown cell to be generated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentMask {
    height: usize,
    width: usize,
    cells: Vec<bool>,
}

impl LatentMask {
    pub fn new(height: usize, width: usize, cells: Vec<bool>) -> Self {
        assert_eq!(cells.len(), height * width, "mask buffer length");
        Self {
            height,
            width,
            cells,
        }
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.cells[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.cells[y * self.width + x] = v;
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count_unknown(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_all_known(&self) -> bool {
        !self.cells.iter().any(|&c| c)
    }

    pub(crate) fn check_against(&self, latent: &Latent) -> Result<(), ShapeError> {
        if latent.height() != self.height || latent.width() != self.width {
            return Err(ShapeError::Mask {
                mask: [self.height, self.width],
                latent: [latent.height(), latent.width()],
            });
        }
        Ok(())
    }
}
