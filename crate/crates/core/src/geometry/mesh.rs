use serde::{Deserialize, Serialize};

use super::vec3::{self, Vec3};
use super::GeometryError;

/// Triangle mesh with per-vertex normals and per-face-corner UVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub normals: Vec<Vec3>,
    pub uvs: Vec<[[f64; 2]; 3]>,
}

impl Mesh {
    /// Validates indices and UV ranges; computes area-weighted normals when
    /// `normals` is `None`. Supplied normals are re-normalized.
    pub fn new(
        vertices: Vec<Vec3>,
        faces: Vec<[u32; 3]>,
        uvs: Vec<[[f64; 2]; 3]>,
        normals: Option<Vec<Vec3>>,
    ) -> Result<Self, GeometryError> {
        if uvs.len() != faces.len() {
            return Err(GeometryError::Invalid(format!(
                "{} faces but {} UV triples",
                faces.len(),
                uvs.len()
            )));
        }
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&i| i as usize >= vertices.len()) {
                return Err(GeometryError::Invalid(format!(
                    "face {fi} references vertex {bad} of {}",
                    vertices.len()
                )));
            }
        }
        if uvs
            .iter()
            .flatten()
            .flatten()
            .any(|c| !(0.0..=1.0).contains(c))
        {
            return Err(GeometryError::Invalid("UV outside [0,1]".into()));
        }
        let normals = match normals {
            Some(n) if n.len() == vertices.len() => n.into_iter().map(vec3::normalize).collect(),
            Some(n) => {
                return Err(GeometryError::Invalid(format!(
                    "{} normals for {} vertices",
                    n.len(),
                    vertices.len()
                )))
            }
            None => area_weighted_normals(&vertices, &faces),
        };
        Ok(Self {
            vertices,
            faces,
            normals,
            uvs,
        })
    }

    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            faces: Vec::new(),
            normals: Vec::new(),
            uvs: Vec::new(),
        }
    }

    pub fn face_vertices(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn face_normals(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.normals[a as usize],
            self.normals[b as usize],
            self.normals[c as usize],
        ]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.face_vertices(f);
        0.5 * vec3::norm(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)))
    }

    /// Point and unit normal at barycentric `b` of face `f`.
    pub fn surface_point(&self, f: usize, b: [f64; 3]) -> (Vec3, Vec3) {
        (
            vec3::blend(self.face_vertices(f), b),
            vec3::normalize(vec3::blend(self.face_normals(f), b)),
        )
    }

    pub fn uv_at(&self, f: usize, b: [f64; 3]) -> [f64; 2] {
        let uv = self.uvs[f];
        [
            uv[0][0] * b[0] + uv[1][0] * b[1] + uv[2][0] * b[2],
            uv[0][1] * b[0] + uv[1][1] * b[1] + uv[2][1] * b[2],
        ]
    }

    /// Centers the bounding box at the origin and scales so the farthest
    /// vertex lies on the unit sphere.
    pub fn normalize_to_unit_sphere(&mut self) {
        if self.vertices.is_empty() {
            return;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        let center = vec3::scale(vec3::add(lo, hi), 0.5);
        let radius = self
            .vertices
            .iter()
            .map(|&v| vec3::norm(vec3::sub(v, center)))
            .fold(0.0, f64::max);
        let s = if radius > 0.0 { 1.0 / radius } else { 1.0 };
        for v in &mut self.vertices {
            *v = vec3::scale(vec3::sub(*v, center), s);
        }
    }

    /// Uniform scale about the origin.
    pub fn scaled(mut self, s: f64) -> Self {
        for v in &mut self.vertices {
            *v = vec3::scale(*v, s);
        }
        self
    }

    pub fn bounding_radius(&self) -> f64 {
        self.vertices.iter().map(|&v| vec3::norm(v)).fold(0.0, f64::max)
    }
}

fn area_weighted_normals(vertices: &[Vec3], faces: &[[u32; 3]]) -> Vec<Vec3> {
    let mut acc = vec![[0.0; 3]; vertices.len()];
    for f in faces {
        let [a, b, c] = f.map(|i| vertices[i as usize]);
        // |cross| is twice the area, so the raw cross product is area-weighted.
        let n = vec3::cross(vec3::sub(b, a), vec3::sub(c, a));
        for &i in f {
            acc[i as usize] = vec3::add(acc[i as usize], n);
        }
    }
    acc.into_iter().map(vec3::normalize).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> Mesh {
        Mesh::new(
            vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 2.0, 0.0]],
            vec![[0, 1, 2]],
            vec![[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn computed_normals_follow_winding() {
        let m = tri();
        for n in &m.normals {
            assert_eq!(*n, [0.0, 0.0, 1.0]);
        }
        assert_eq!(m.face_area(0), 2.0);
    }

    #[test]
    fn normalization_fits_unit_sphere() {
        let mut m = tri();
        m.normalize_to_unit_sphere();
        assert!((m.bounding_radius() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_indices_and_uvs() {
        assert!(Mesh::new(vec![[0.0; 3]], vec![[0, 0, 1]], vec![[[0.0; 2]; 3]], None).is_err());
        assert!(Mesh::new(
            vec![[0.0; 3]; 3],
            vec![[0, 1, 2]],
            vec![[[0.0, 0.0], [1.5, 0.0], [0.0, 1.0]]],
            None
        )
        .is_err());
    }
}
