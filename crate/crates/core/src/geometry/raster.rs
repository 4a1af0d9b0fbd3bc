//! Z-buffered, perspective-correct triangle rasterization.

use super::camera::Camera;
use super::mesh::Mesh;
use super::vec3::{self, Vec3};

pub const NO_FACE: u32 = u32::MAX;

/// Per-pixel outputs of [`rasterize`], row-major with `y` down.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterBuffers {
    pub width: usize,
    pub height: usize,
    /// View-space depth; `+inf` on background.
    pub depth: Vec<f64>,
    /// Face index or [`NO_FACE`].
    pub face_id: Vec<u32>,
    pub bary: Vec<[f64; 3]>,
    pub normal: Vec<Vec3>,
}

impl RasterBuffers {
    fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            depth: vec![f64::INFINITY; n],
            face_id: vec![NO_FACE; n],
            bary: vec![[0.0; 3]; n],
            normal: vec![[0.0; 3]; n],
        }
    }

    pub fn is_foreground(&self, i: usize) -> bool {
        self.face_id[i] != NO_FACE
    }

    pub fn foreground_count(&self) -> usize {
        self.face_id.iter().filter(|&&f| f != NO_FACE).count()
    }
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Rasterizes front faces (counter-clockwise as seen from the camera) at
/// pixel centers. Depth ties keep the lower face index. Triangles reaching
/// behind the near plane are skipped.
pub fn rasterize(mesh: &Mesh, cam: &Camera) -> RasterBuffers {
    let (w, h) = (cam.width, cam.height);
    let mut buf = RasterBuffers::empty(w, h);
    for fi in 0..mesh.faces.len() {
        let verts = mesh.face_vertices(fi);
        let mut scr = [[0.0; 2]; 3];
        let mut inv_depth = [0.0; 3];
        let mut visible = true;
        for k in 0..3 {
            match cam.project(verts[k]) {
                Some((x, y, d)) => {
                    scr[k] = [x, y];
                    inv_depth[k] = 1.0 / d;
                }
                None => visible = false,
            }
        }
        if !visible {
            continue;
        }
        let area = edge(scr[0], scr[1], scr[2]);
        // y points down in pixel space, so front faces have negative area.
        if !(area < 0.0) {
            continue;
        }
        let min_x = scr.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let max_x = scr.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_y = scr.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let max_y = scr.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (min_x - 0.5).ceil().max(0.0) as usize;
        let y0 = (min_y - 0.5).ceil().max(0.0) as usize;
        let x1 = ((max_x - 0.5).floor() as i64).min(w as i64 - 1);
        let y1 = ((max_y - 0.5).floor() as i64).min(h as i64 - 1);
        if x1 < x0 as i64 || y1 < y0 as i64 {
            continue;
        }
        let normals = mesh.face_normals(fi);
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                let l = [
                    edge(scr[1], scr[2], p) / area,
                    edge(scr[2], scr[0], p) / area,
                    edge(scr[0], scr[1], p) / area,
                ];
                if l.iter().any(|&v| v < 0.0) {
                    continue;
                }
                let pc = [l[0] * inv_depth[0], l[1] * inv_depth[1], l[2] * inv_depth[2]];
                let s = pc[0] + pc[1] + pc[2];
                let depth = 1.0 / s;
                let i = y * w + x;
                if depth < buf.depth[i] {
                    let b = [pc[0] / s, pc[1] / s, pc[2] / s];
                    buf.depth[i] = depth;
                    buf.face_id[i] = fi as u32;
                    buf.bary[i] = b;
                    buf.normal[i] = vec3::normalize(vec3::blend(normals, b));
                }
            }
        }
    }
    buf
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::camera::{viewpoint_to_camera, Viewpoint};
    use crate::geometry::primitives;

    #[test]
    fn empty_mesh_is_all_background() {
        let cam = viewpoint_to_camera(&Viewpoint::new(0.0, 0.0, 1.0).unwrap(), (16, 16), 45.0);
        let b = rasterize(&Mesh::empty(), &cam);
        assert_eq!(b.foreground_count(), 0);
        assert!(b.depth.iter().all(|d| d.is_infinite()));
    }

    #[test]
    fn fronto_parallel_quad_fills_frustum_at_constant_depth() {
        // At distance 1 the 45° frustum is 2·tan(22.5°) ≈ 0.83 wide.
        let quad = primitives::quad(1.0);
        let cam = viewpoint_to_camera(&Viewpoint::new(0.0, 0.0, 1.0).unwrap(), (32, 32), 45.0);
        let b = rasterize(&quad, &cam);
        assert_eq!(b.foreground_count(), 32 * 32);
        for i in 0..b.depth.len() {
            assert!((b.depth[i] - 1.0).abs() < 1e-5);
            let s: f64 = b.bary[i].iter().sum();
            assert!((s - 1.0).abs() < 1e-5 && b.bary[i].iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn back_faces_are_culled() {
        let quad = primitives::quad(1.0);
        let cam = viewpoint_to_camera(&Viewpoint::new(180.0, 0.0, 1.0).unwrap(), (16, 16), 45.0);
        assert_eq!(rasterize(&quad, &cam).foreground_count(), 0);
    }

    #[test]
    fn doubling_radius_pushes_every_depth_back() {
        let mesh = primitives::icosphere(2).scaled(0.35);
        let near = viewpoint_to_camera(&Viewpoint::new(30.0, 15.0, 1.0).unwrap(), (48, 48), 45.0);
        let far = viewpoint_to_camera(&Viewpoint::new(30.0, 15.0, 2.0).unwrap(), (48, 48), 45.0);
        let (a, b) = (rasterize(&mesh, &near), rasterize(&mesh, &far));
        let min_far = b.depth.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_near = a.depth.iter().cloned().filter(|d| d.is_finite()).fold(0.0, f64::max);
        assert!(min_far > max_near);
        // Same ray through the image center hits the same point, now one unit further.
        let c = 24 * 48 + 24;
        assert!(b.depth[c] > a.depth[c]);
    }
}
