//! Per-pixel keep/new/update/ignore labelling of a view and its latent mask.

use serde::{Deserialize, Serialize};

use crate::atlas::{pixel_hit, TextureAtlas, MIN_COSINE};
use crate::geometry::{Camera, Mesh, RasterBuffers};
use crate::image::{Image, Rgb8};
use crate::latent::LatentMask;

pub const DEFAULT_UPDATE_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Background,
    Keep,
    New,
    Update,
    Ignore,
}

impl Region {
    /// Unknown during inpainting.
    pub fn is_unknown(self) -> bool {
        matches!(self, Region::New | Region::Ignore)
    }

    pub fn debug_color(self) -> Rgb8 {
        match self {
            Region::Background => [0, 0, 0],
            Region::Keep => [60, 120, 255],
            Region::New => [255, 80, 60],
            Region::Update => [80, 220, 80],
            Region::Ignore => [250, 220, 40],
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("image {width}×{height} is not divisible by latent factor {factor}")]
pub struct FactorError {
    pub width: usize,
    pub height: usize,
    pub factor: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionCounts {
    pub keep: usize,
    pub new: usize,
    pub update: usize,
    pub ignore: usize,
    pub background: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMasks {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Region>,
    pub latent_mask: LatentMask,
}

impl RegionMasks {
    pub fn from_labels(width: usize, height: usize, labels: Vec<Region>, factor: usize) -> Result<Self, FactorError> {
        assert_eq!(labels.len(), width * height);
        let latent_mask = to_latent_mask(&labels, width, height, factor)?;
        Ok(Self {
            width,
            height,
            labels,
            latent_mask,
        })
    }

    /// Every foreground pixel gets `label`.
    pub fn uniform(buf: &RasterBuffers, label: Region, factor: usize) -> Result<Self, FactorError> {
        let labels = (0..buf.width * buf.height)
            .map(|i| if buf.is_foreground(i) { label } else { Region::Background })
            .collect();
        Self::from_labels(buf.width, buf.height, labels, factor)
    }

    pub fn counts(&self) -> RegionCounts {
        let mut c = RegionCounts::default();
        for l in &self.labels {
            match l {
                Region::Keep => c.keep += 1,
                Region::New => c.new += 1,
                Region::Update => c.update += 1,
                Region::Ignore => c.ignore += 1,
                Region::Background => c.background += 1,
            }
        }
        c
    }

    pub fn debug_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: self.labels.iter().map(|l| l.debug_color()).collect(),
        }
    }
}

/// Labels every pixel of a view against the current atlas.
///
/// Grazing pixels (cosine below 0.1) are IGNORE whatever their texel holds;
/// otherwise an unpainted texel is NEW, a painted one seen at least
/// `update_margin` more frontally than its cached best is UPDATE, and the
/// rest are KEEP.
pub fn classify_regions(
    mesh: &Mesh,
    buf: &RasterBuffers,
    atlas: &TextureAtlas,
    cam: &Camera,
    update_margin: f64,
    factor: usize,
) -> Result<RegionMasks, FactorError> {
    let labels = (0..buf.width * buf.height)
        .map(|i| {
            let Some(hit) = pixel_hit(mesh, buf, cam, i) else {
                return Region::Background;
            };
            if hit.cos < MIN_COSINE {
                return Region::Ignore;
            }
            let t = atlas.texel_index(hit.uv);
            if !atlas.is_painted(t) {
                Region::New
            } else if hit.cos >= atlas.best_cos(t) + update_margin {
                Region::Update
            } else {
                Region::Keep
            }
        })
        .collect();
    RegionMasks::from_labels(buf.width, buf.height, labels, factor)
}

/// A latent cell is unknown iff any pixel it covers is NEW or IGNORE.
pub fn to_latent_mask(labels: &[Region], width: usize, height: usize, factor: usize) -> Result<LatentMask, FactorError> {
    if factor == 0 || width % factor != 0 || height % factor != 0 {
        return Err(FactorError { width, height, factor });
    }
    let (w, h) = (width / factor, height / factor);
    let mut mask = LatentMask::filled(h, w, false);
    for y in 0..height {
        for x in 0..width {
            if labels[y * width + x].is_unknown() {
                mask.set(y / factor, x / factor, true);
            }
        }
    }
    Ok(mask)
}

/// Nearest-neighbour expansion of a latent mask back to pixel labels
/// (unknown cells become NEW, known ones KEEP).
pub fn upsample_mask(mask: &LatentMask, factor: usize) -> Vec<Region> {
    let (w, h) = (mask.width() * factor, mask.height() * factor);
    (0..w * h)
        .map(|i| {
            if mask.get(i / w / factor, i % w / factor) {
                Region::New
            } else {
                Region::Keep
            }
        })
        .collect()
}
