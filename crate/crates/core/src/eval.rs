//! View-consistency score: how much the patch colors of the textured mesh
//! disagree between views on rings above and below the equator.

use serde::{Deserialize, Serialize};

use crate::atlas::{render_textured, TextureAtlas};
use crate::geometry::{rasterize, viewpoint_to_camera, Mesh, Viewpoint, DEFAULT_FOV_DEG};

/// Patch grid per side of a rendered view.
pub const PATCH_GRID: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_per_hemisphere: usize,
    /// Elevations of the upper and lower rings in degrees.
    pub elevations: (f64, f64),
    pub radius: f64,
    pub resolution: usize,
    /// Azimuth of the first camera of each ring.
    pub azimuth_offset: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_per_hemisphere: 25,
            elevations: (30.0, -30.0),
            radius: 1.0,
            resolution: 64,
            azimuth_offset: 0.0,
        }
    }
}

impl EvalConfig {
    pub fn viewpoints(&self) -> Vec<Viewpoint> {
        let n = self.n_per_hemisphere;
        [self.elevations.0, self.elevations.1]
            .iter()
            .flat_map(|&el| {
                (0..n).map(move |k| {
                    let az = self.azimuth_offset + 360.0 * k as f64 / n as f64;
                    Viewpoint::new(az, el, self.radius).expect("valid eval view")
                })
            })
            .collect()
    }
}

/// Mean color in `[0,1]` per patch, `None` where the patch has no
/// foreground.
pub type Descriptor = Vec<Option<[f64; 3]>>;

pub fn view_descriptor(mesh: &Mesh, atlas: &TextureAtlas, view: &Viewpoint, resolution: usize) -> Descriptor {
    assert!(resolution % PATCH_GRID == 0, "resolution must be a multiple of {PATCH_GRID}");
    let cam = viewpoint_to_camera(view, (resolution, resolution), DEFAULT_FOV_DEG);
    let buf = rasterize(mesh, &cam);
    let img = render_textured(mesh, atlas, &buf, [0; 3]);
    let cell = resolution / PATCH_GRID;
    let mut sums = vec![([0.0; 3], 0usize); PATCH_GRID * PATCH_GRID];
    for y in 0..resolution {
        for x in 0..resolution {
            let i = y * resolution + x;
            if !buf.is_foreground(i) {
                continue;
            }
            let s = &mut sums[(y / cell) * PATCH_GRID + x / cell];
            for c in 0..3 {
                s.0[c] += img.pixels[i][c] as f64 / 255.0;
            }
            s.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(s, n)| (n > 0).then(|| s.map(|v| v / n as f64)))
        .collect()
}

/// RMS color difference over patches covered in both views, scaled to
/// `[0,1]`; `None` if the views share no patch.
pub fn descriptor_distance(a: &Descriptor, b: &Descriptor) -> Option<f64> {
    let (mut acc, mut n) = (0.0, 0usize);
    for (p, q) in a.iter().zip(b) {
        if let (Some(p), Some(q)) = (p, q) {
            acc += (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>();
            n += 1;
        }
    }
    (n > 0).then(|| (acc / n as f64).sqrt() / 3f64.sqrt())
}

/// Mean pairwise descriptor distance over all views of `cfg`.
pub fn eval_consistency(mesh: &Mesh, atlas: &TextureAtlas, cfg: &EvalConfig) -> f64 {
    let views = cfg.viewpoints();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(views.len().max(1));
    let chunk = views.len().div_ceil(threads).max(1);
    let descriptors: Vec<Descriptor> = std::thread::scope(|s| {
        let handles: Vec<_> = views
            .chunks(chunk)
            .map(|vs| {
                s.spawn(move || {
                    vs.iter()
                        .map(|v| view_descriptor(mesh, atlas, v, cfg.resolution))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("eval worker")).collect()
    });
    let (mut acc, mut n) = (0.0, 0usize);
    for i in 0..descriptors.len() {
        for j in i + 1..descriptors.len() {
            if let Some(d) = descriptor_distance(&descriptors[i], &descriptors[j]) {
                acc += d;
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}
