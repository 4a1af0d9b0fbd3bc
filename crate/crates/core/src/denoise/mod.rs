//! Noise-prediction backends behind one interface.

mod analytic;
pub mod protocol;
mod remote;
pub mod toy;

pub use analytic::{analytic_predict, AnalyticGaussian};
pub use remote::{RemoteDenoiser, RetryPolicy};
pub use toy::{ToyArch, ToyDenoiser};

use serde::{Deserialize, Serialize};

use crate::latent::{Latent, ShapeError};

#[derive(Debug, thiserror::Error)]
pub enum DenoiseError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("conditioning depth is {got:?}, latent is {want:?}")]
    DepthShape { got: [usize; 2], want: [usize; 2] },
    #[error("cannot reach denoise server: {0}")]
    Connection(String),
    #[error("denoise server returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("protocol version mismatch: expected {expected:?}, server speaks {got:?}")]
    Version { expected: String, got: String },
    #[error("malformed denoise response: {0}")]
    Protocol(String),
    #[error("response tensor shape {got:?} does not match request {want:?}")]
    ResponseShape { got: Vec<usize>, want: Vec<usize> },
    #[error("{0}")]
    Backend(String),
}

/// Opaque prompt: a token for local backends, the raw text for the remote one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub token: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl Prompt {
    pub fn token(token: u32) -> Self {
        Self { token, text: None }
    }

    /// Hashes `text` (FNV-1a) into a token and keeps the text for remote use.
    pub fn from_text(text: &str) -> Self {
        let mut h: u32 = 0x811c_9dc5;
        for b in text.bytes() {
            h ^= u32::from(b);
            h = h.wrapping_mul(0x0100_0193);
        }
        Self {
            token: h,
            text: Some(text.to_owned()),
        }
    }
}

/// Normalized `h×w` depth map in `[0,1]`; background is `0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    pub prompt: Prompt,
    pub depth: DepthMap,
}

impl Conditioning {
    /// Token 0 with an all-background depth map.
    pub fn unconditional(height: usize, width: usize) -> Self {
        Self {
            prompt: Prompt::token(0),
            depth: DepthMap::zeros(height, width),
        }
    }

    pub(crate) fn check_against(&self, z: &Latent) -> Result<(), DenoiseError> {
        let want = [z.height(), z.width()];
        let got = [self.depth.height, self.depth.width];
        if got != want || self.depth.values.len() != want[0] * want[1] {
            return Err(DenoiseError::DepthShape { got, want });
        }
        Ok(())
    }
}

/// `ε̂ = ε_φ(z_t, t, c)`: predicts the noise contained in `z_t`.
pub trait Denoiser {
    fn predict(&self, z_t: &Latent, t: usize, cond: &Conditioning) -> Result<Latent, DenoiseError>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict(&self, z_t: &Latent, t: usize, cond: &Conditioning) -> Result<Latent, DenoiseError> {
        (**self).predict(z_t, t, cond)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn predict(&self, z_t: &Latent, t: usize, cond: &Conditioning) -> Result<Latent, DenoiseError> {
        (**self).predict(z_t, t, cond)
    }
}
