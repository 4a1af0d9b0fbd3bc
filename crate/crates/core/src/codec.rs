//! Identity "autoencoder": the latent is the image mapped to `[-1,1]` and
//! average-pooled by the latent factor; decoding upsamples by repetition.

use crate::denoise::DepthMap;
use crate::geometry::RasterBuffers;
use crate::image::{to_u8, Image};
use crate::latent::{Latent, LatentMask};

pub fn encode(img: &Image, factor: usize) -> Latent {
    let (w, h) = (img.width / factor, img.height / factor);
    let mut z = Latent::zeros([3, h, w]);
    let norm = 1.0 / (factor * factor) as f64;
    for y in 0..h * factor {
        for x in 0..w * factor {
            let p = img.get(x, y);
            for c in 0..3 {
                let v = z.get(c, y / factor, x / factor) + (2.0 * p[c] as f64 / 255.0 - 1.0) * norm;
                z.set(c, y / factor, x / factor, v);
            }
        }
    }
    z
}

pub fn decode(z: &Latent, factor: usize) -> Image {
    let (w, h) = (z.width() * factor, z.height() * factor);
    let mut img = Image::filled(w, h, [0; 3]);
    for y in 0..h {
        for x in 0..w {
            let c = |k| to_u8((z.get(k, y / factor, x / factor) + 1.0) / 2.0);
            img.set(x, y, [c(0), c(1), c(2)]);
        }
    }
    img
}

/// Decoded unknown cells over the rendered image's known cells.
pub fn composite(rendered: &Image, z0: &Latent, mask: &LatentMask, factor: usize) -> Image {
    let decoded = decode(z0, factor);
    let mut out = rendered.clone();
    for y in 0..out.height {
        for x in 0..out.width {
            if mask.get(y / factor, x / factor) {
                out.set(x, y, decoded.get(x, y));
            }
        }
    }
    out
}

/// Per-view depth condition at latent resolution: the nearest foreground
/// point maps to 1, the farthest to 0.1, background to 0, then average pooled.
pub fn depth_condition(buf: &RasterBuffers, factor: usize) -> DepthMap {
    let fg = || buf.depth.iter().copied().filter(|d| d.is_finite());
    let lo = fg().fold(f64::INFINITY, f64::min);
    let hi = fg().fold(f64::NEG_INFINITY, f64::max);
    let (w, h) = (buf.width / factor, buf.height / factor);
    let mut out = DepthMap::zeros(h, w);
    let norm = 1.0 / (factor * factor) as f64;
    for y in 0..h * factor {
        for x in 0..w * factor {
            let d = buf.depth[y * buf.width + x];
            if !d.is_finite() {
                continue;
            }
            let v = if hi > lo { 0.1 + 0.9 * (hi - d) / (hi - lo) } else { 1.0 };
            out.values[(y / factor) * w + x / factor] += v * norm;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{primitives, rasterize, viewpoint_to_camera, Viewpoint};

    #[test]
    fn constant_image_round_trips() {
        let img = Image::filled(8, 8, [0, 128, 255]);
        let z = encode(&img, 4);
        assert_eq!(z.shape(), [3, 2, 2]);
        assert!((z.get(0, 1, 1) + 1.0).abs() < 1e-12);
        assert!((z.get(2, 0, 0) - 1.0).abs() < 1e-12);
        assert_eq!(decode(&z, 4), img);
    }

    #[test]
    fn composite_only_touches_unknown_cells() {
        let rendered = Image::filled(4, 4, [10, 10, 10]);
        let z = Latent::filled([3, 2, 2], 1.0);
        let mut m = LatentMask::filled(2, 2, false);
        m.set(0, 1, true);
        let out = composite(&rendered, &z, &m, 2);
        assert_eq!(out.get(3, 0), [255; 3]);
        assert_eq!(out.get(0, 0), [10; 3]);
        assert_eq!(out.get(3, 3), [10; 3]);
    }

    #[test]
    fn depth_condition_range() {
        let mesh = primitives::icosphere(2).scaled(0.35);
        let cam = viewpoint_to_camera(&Viewpoint::new(0.0, 15.0, 1.0).unwrap(), (64, 64), 45.0);
        let d = depth_condition(&rasterize(&mesh, &cam), 4);
        assert!(d.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(d.values[0], 0.0);
        assert!(d.values[8 * 16 + 8] > 0.9);
    }
}
