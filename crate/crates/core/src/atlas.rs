//! UV texture atlas: back-projection of generated views, textured rendering,
//! coverage statistics and OBJ/MTL/PNG export.

use std::path::Path;

use image::{ImageBuffer, Rgba, RgbaImage};

use crate::geometry::vec3::{self, Vec3};
use crate::geometry::{write_obj, Camera, Mesh, RasterBuffers};
use crate::image::{io_err, Image, ImageIoError, Rgb8};
use crate::regions::{Region, RegionMasks};

/// Color rendered for foreground pixels whose texel was never painted.
pub const SENTINEL: Rgb8 = [255, 0, 255];

/// Views at more grazing angles than this never write texels.
pub const MIN_COSINE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct TextureAtlas {
    size: usize,
    texels: Vec<Rgb8>,
    painted: Vec<bool>,
    best_cos: Vec<f64>,
}

impl TextureAtlas {
    pub fn new(size: usize) -> Result<Self, String> {
        if size == 0 || !size.is_power_of_two() {
            return Err(format!("atlas size {size} must be a positive power of two"));
        }
        let n = size * size;
        Ok(Self {
            size,
            texels: vec![[0; 3]; n],
            painted: vec![false; n],
            best_cos: vec![0.0; n],
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn texel(&self, i: usize) -> Rgb8 {
        self.texels[i]
    }

    pub fn is_painted(&self, i: usize) -> bool {
        self.painted[i]
    }

    pub fn best_cos(&self, i: usize) -> f64 {
        self.best_cos[i]
    }

    pub fn painted_count(&self) -> usize {
        self.painted.iter().filter(|&&p| p).count()
    }

    /// Writes one texel; `cos` must be positive.
    pub fn paint(&mut self, i: usize, c: Rgb8, cos: f64) {
        debug_assert!(cos > 0.0);
        self.texels[i] = c;
        self.painted[i] = true;
        self.best_cos[i] = cos;
    }

    pub fn paint_all(&mut self, c: Rgb8, cos: f64) {
        for i in 0..self.texels.len() {
            self.paint(i, c, cos);
        }
    }

    /// Nearest texel for a UV coordinate; row 0 is `v = 1`.
    #[inline]
    pub fn texel_index(&self, uv: [f64; 2]) -> usize {
        let a = self.size as f64;
        let x = ((uv[0] * a).floor() as isize).clamp(0, self.size as isize - 1) as usize;
        let y = (((1.0 - uv[1]) * a).floor() as isize).clamp(0, self.size as isize - 1) as usize;
        y * self.size + x
    }

    /// RGBA PNG; unpainted texels get alpha 0.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImageIoError> {
        let path = path.as_ref();
        let mut raw = Vec::with_capacity(self.texels.len() * 4);
        for (c, &p) in self.texels.iter().zip(&self.painted) {
            raw.extend_from_slice(c);
            raw.push(if p { 255 } else { 0 });
        }
        let s = self.size as u32;
        let buf: RgbaImage = ImageBuffer::from_raw(s, s, raw).expect("sized buffer");
        buf.save(path).map_err(|e| io_err(path, e))
    }

    /// Inverse of [`save_png`](Self::save_png). The angle cache is not
    /// stored, so painted texels come back with `best_cos = 1`.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, ImageIoError> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| io_err(path, e))?.to_rgba8();
        let size = img.width() as usize;
        if img.height() as usize != size {
            return Err(io_err(path, "atlas must be square"));
        }
        let mut atlas = Self::new(size).map_err(|e| io_err(path, e))?;
        for (i, &Rgba([r, g, b, a])) in img.pixels().enumerate() {
            atlas.texels[i] = [r, g, b];
            if a > 0 {
                atlas.painted[i] = true;
                atlas.best_cos[i] = 1.0;
            }
        }
        Ok(atlas)
    }
}

/// Texel → surface lookup for one mesh and atlas size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TexelRef {
    pub face: u32,
    pub bary: [f64; 3],
    /// Texel center lies inside the face's UV triangle (not a gutter texel).
    pub core: bool,
}

#[derive(Debug, Clone)]
pub struct TexelMap {
    size: usize,
    entries: Vec<Option<TexelRef>>,
}

fn uv_bary(tri: [[f64; 2]; 3], p: [f64; 2]) -> [f64; 3] {
    let [a, b, c] = tri;
    let d = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
    if d.abs() < 1e-300 {
        return [1.0 / 3.0; 3];
    }
    let l0 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / d;
    let l1 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / d;
    [l0, l1, 1.0 - l0 - l1]
}

fn clamp_bary(b: [f64; 3]) -> [f64; 3] {
    let c = b.map(|v| v.max(0.0));
    let s: f64 = c.iter().sum();
    if s > 0.0 {
        c.map(|v| v / s)
    } else {
        [1.0 / 3.0; 3]
    }
}

impl TexelMap {
    /// Rasterizes every face's UV triangle at texel centers (first face wins
    /// overlaps), then grows a two-texel gutter around the charts so that
    /// edge pixels always find a mapped texel.
    pub fn build(mesh: &Mesh, size: usize) -> Self {
        let a = size as f64;
        let mut entries: Vec<Option<TexelRef>> = vec![None; size * size];
        let center = |i: usize| {
            let (x, y) = (i % size, i / size);
            [(x as f64 + 0.5) / a, 1.0 - (y as f64 + 0.5) / a]
        };
        for (f, tri) in mesh.uvs.iter().enumerate() {
            let xs = tri.map(|c| c[0] * a);
            let ys = tri.map(|c| (1.0 - c[1]) * a);
            let lo = |v: [f64; 3]| ((v.iter().cloned().fold(f64::INFINITY, f64::min) - 0.5).ceil().max(0.0)) as usize;
            let hi = |v: [f64; 3]| ((v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - 0.5).floor() as isize).min(size as isize - 1);
            let (x0, x1, y0, y1) = (lo(xs), hi(xs), lo(ys), hi(ys));
            let mut any = false;
            for y in y0 as isize..=y1 {
                for x in x0 as isize..=x1 {
                    let i = y as usize * size + x as usize;
                    let b = uv_bary(*tri, center(i));
                    if b.iter().all(|&v| v >= -1e-12) {
                        any = true;
                        if entries[i].is_none() {
                            entries[i] = Some(TexelRef {
                                face: f as u32,
                                bary: clamp_bary(b),
                                core: true,
                            });
                        }
                    }
                }
            }
            if !any {
                // Sliver smaller than a texel: claim the texel under its centroid.
                let c = [(tri[0][0] + tri[1][0] + tri[2][0]) / 3.0, (tri[0][1] + tri[1][1] + tri[2][1]) / 3.0];
                let x = ((c[0] * a) as usize).min(size - 1);
                let y = (((1.0 - c[1]) * a) as usize).min(size - 1);
                let i = y * size + x;
                if entries[i].is_none() {
                    entries[i] = Some(TexelRef {
                        face: f as u32,
                        bary: [1.0 / 3.0; 3],
                        core: true,
                    });
                }
            }
        }
        for _ in 0..2 {
            let snapshot = entries.clone();
            for i in 0..entries.len() {
                if snapshot[i].is_some() {
                    continue;
                }
                let (x, y) = ((i % size) as isize, (i / size) as isize);
                let mut best: Option<(f64, TexelRef)> = None;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= size as isize || ny >= size as isize {
                            continue;
                        }
                        let Some(n) = snapshot[ny as usize * size + nx as usize] else { continue };
                        let b = uv_bary(mesh.uvs[n.face as usize], center(i));
                        let outside: f64 = b.iter().map(|v| (-v).max(0.0)).sum();
                        if best.map_or(true, |(o, _)| outside < o) {
                            best = Some((
                                outside,
                                TexelRef {
                                    face: n.face,
                                    bary: clamp_bary(b),
                                    core: false,
                                },
                            ));
                        }
                    }
                }
                entries[i] = best.map(|(_, r)| r);
            }
        }
        Self { size, entries }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize) -> Option<TexelRef> {
        self.entries[i]
    }

    pub fn core_count(&self) -> usize {
        self.entries.iter().flatten().filter(|r| r.core).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, TexelRef)> + '_ {
        self.entries.iter().enumerate().filter_map(|(i, e)| e.map(|r| (i, r)))
    }
}

/// Surface sample behind a foreground pixel.
#[derive(Debug, Clone, Copy)]
pub struct PixelHit {
    pub point: Vec3,
    pub normal: Vec3,
    pub uv: [f64; 2],
    pub cos: f64,
}

pub fn pixel_hit(mesh: &Mesh, buf: &RasterBuffers, cam: &Camera, i: usize) -> Option<PixelHit> {
    if !buf.is_foreground(i) {
        return None;
    }
    let f = buf.face_id[i] as usize;
    let b = buf.bary[i];
    let point = vec3::blend(mesh.face_vertices(f), b);
    let normal = buf.normal[i];
    Some(PixelHit {
        point,
        normal,
        uv: mesh.uv_at(f, b),
        cos: cam.view_cosine(point, normal),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProjectStats {
    /// Texels written by their own pixel.
    pub scattered: usize,
    /// Previously unpainted texels filled from the pixel they project into.
    pub filled: usize,
}

/// Back-projects `image` into the atlas.
///
/// Each NEW or UPDATE pixel writes the texel under it; among pixels sharing
/// a texel the most frontal one wins, ties going to the earlier pixel in
/// scan order. NEW writes unconditionally, UPDATE only with a strictly
/// better cosine than the texel's cache. A second pass fills still-unpainted
/// visible texels of the mapped charts from the pixel they land in, as long
/// as that pixel is NEW or UPDATE. KEEP and IGNORE pixels never write.
#[allow(clippy::too_many_arguments)]
pub fn project(
    atlas: &mut TextureAtlas,
    mesh: &Mesh,
    texels: &TexelMap,
    image: &Image,
    buf: &RasterBuffers,
    masks: &RegionMasks,
    cam: &Camera,
) -> ProjectStats {
    assert_eq!(texels.size(), atlas.size, "texel map built for another atlas size");
    let mut stats = ProjectStats::default();
    let n = atlas.size * atlas.size;
    // texel -> (cosine, pixel, label)
    let mut claim: Vec<Option<(f64, usize, Region)>> = vec![None; n];
    for i in 0..buf.width * buf.height {
        let label = masks.labels[i];
        if !matches!(label, Region::New | Region::Update) {
            continue;
        }
        let Some(hit) = pixel_hit(mesh, buf, cam, i) else { continue };
        let t = atlas.texel_index(hit.uv);
        if claim[t].map_or(true, |(c, _, _)| hit.cos > c) {
            claim[t] = Some((hit.cos, i, label));
        }
    }
    let mut touched = vec![false; n];
    for (t, c) in claim.iter().enumerate() {
        let Some((cos, px, label)) = *c else { continue };
        touched[t] = true;
        if label == Region::New || cos > atlas.best_cos[t] {
            atlas.paint(t, image.pixels[px], cos);
            stats.scattered += 1;
        }
    }

    for (t, r) in texels.iter() {
        if touched[t] || atlas.painted[t] {
            continue;
        }
        let (p, normal) = mesh.surface_point(r.face as usize, r.bary);
        let to_cam = vec3::sub(cam.position, p);
        if vec3::dot(normal, to_cam) <= 0.0 {
            continue;
        }
        let cos = cam.view_cosine(p, normal);
        if cos < MIN_COSINE {
            continue;
        }
        let Some((x, y, d)) = cam.project(p) else { continue };
        if x < 0.0 || y < 0.0 {
            continue;
        }
        let (px, py) = (x as usize, y as usize);
        if px >= buf.width || py >= buf.height {
            continue;
        }
        let i = py * buf.width + px;
        if !matches!(masks.labels[i], Region::New | Region::Update) {
            continue;
        }
        let tol = 2.0 * cam.pixel_footprint(d) / cos.max(0.3);
        if buf.face_id[i] != r.face && (buf.depth[i] - d).abs() > tol {
            continue;
        }
        atlas.paint(t, image.pixels[i], cos);
        stats.filled += 1;
    }
    stats
}

/// Nearest-texel albedo render; unpainted texels show [`SENTINEL`].
pub fn render_textured(mesh: &Mesh, atlas: &TextureAtlas, buf: &RasterBuffers, bg: Rgb8) -> Image {
    let mut img = Image::filled(buf.width, buf.height, bg);
    for i in 0..buf.width * buf.height {
        if !buf.is_foreground(i) {
            continue;
        }
        let f = buf.face_id[i] as usize;
        let t = atlas.texel_index(mesh.uv_at(f, buf.bary[i]));
        img.pixels[i] = if atlas.painted[t] { atlas.texels[t] } else { SENTINEL };
    }
    img
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CoverageStats {
    pub painted_texel_fraction: f64,
    pub painted_area_fraction: f64,
}

/// Fractions over chart-interior texels; area weights give each face its
/// surface area spread evenly over its texels.
pub fn coverage_stats(atlas: &TextureAtlas, mesh: &Mesh, texels: &TexelMap) -> CoverageStats {
    let mut per_face = vec![0usize; mesh.faces.len()];
    for (_, r) in texels.iter().filter(|(_, r)| r.core) {
        per_face[r.face as usize] += 1;
    }
    let (mut n, mut painted, mut area, mut painted_area) = (0usize, 0usize, 0.0, 0.0);
    for (t, r) in texels.iter().filter(|(_, r)| r.core) {
        let w = mesh.face_area(r.face as usize) / per_face[r.face as usize] as f64;
        n += 1;
        area += w;
        if atlas.painted[t] {
            painted += 1;
            painted_area += w;
        }
    }
    CoverageStats {
        painted_texel_fraction: if n == 0 { 0.0 } else { painted as f64 / n as f64 },
        painted_area_fraction: if area > 0.0 { painted_area / area } else { 0.0 },
    }
}

/// Faces with no painted chart texel.
pub fn unpainted_faces(atlas: &TextureAtlas, texels: &TexelMap, faces: usize) -> Vec<usize> {
    let mut painted = vec![false; faces];
    let mut mapped = vec![false; faces];
    for (t, r) in texels.iter().filter(|(_, r)| r.core) {
        mapped[r.face as usize] = true;
        painted[r.face as usize] |= atlas.painted[t];
    }
    (0..faces).filter(|&f| mapped[f] && !painted[f]).collect()
}

/// Writes `mesh.obj`, `mesh.mtl` and `atlas.png` into `dir`.
pub fn export_textured(dir: impl AsRef<Path>, mesh: &Mesh, atlas: &TextureAtlas) -> Result<(), ImageIoError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    atlas.save_png(dir.join("atlas.png"))?;
    let mtl = "newmtl textured\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1\nmap_Kd atlas.png\n";
    let p = dir.join("mesh.mtl");
    std::fs::write(&p, mtl).map_err(|e| io_err(&p, e))?;
    let p = dir.join("mesh.obj");
    std::fs::write(&p, write_obj(mesh, Some(("mesh.mtl", "textured")))).map_err(|e| io_err(&p, e))
}
