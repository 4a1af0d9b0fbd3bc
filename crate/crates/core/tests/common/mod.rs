//! Independent oracles and fixtures shared by the integration suites.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textailor::geometry::vec3::{self, Vec3};
use textailor::geometry::{primitives, Camera, Mesh, NO_FACE};

/// Nearest front-facing triangle under every pixel center by brute-force
/// Möller–Trumbore intersection. Ties keep the lower face index.
pub fn ray_cast_face_ids(mesh: &Mesh, cam: &Camera) -> Vec<u32> {
    let mut out = vec![NO_FACE; cam.width * cam.height];
    for y in 0..cam.height {
        for x in 0..cam.width {
            let dir = cam.ray_direction(x as f64 + 0.5, y as f64 + 0.5);
            let mut best = (f64::INFINITY, NO_FACE);
            for f in 0..mesh.faces.len() {
                let [a, b, c] = mesh.face_vertices(f);
                let (e1, e2) = (vec3::sub(b, a), vec3::sub(c, a));
                // Back faces are invisible.
                if vec3::dot(vec3::cross(e1, e2), vec3::sub(cam.position, a)) <= 0.0 {
                    continue;
                }
                if let Some(t) = intersect(cam.position, dir, a, e1, e2) {
                    if t < best.0 {
                        best = (t, f as u32);
                    }
                }
            }
            out[y * cam.width + x] = best.1;
        }
    }
    out
}

fn intersect(o: Vec3, d: Vec3, a: Vec3, e1: Vec3, e2: Vec3) -> Option<f64> {
    let p = vec3::cross(d, e2);
    let det = vec3::dot(e1, p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = vec3::sub(o, a);
    let u = vec3::dot(s, p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = vec3::cross(s, e1);
    let v = vec3::dot(d, q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = vec3::dot(e2, q) * inv;
    (t > 1e-9).then_some(t)
}

fn rebuild(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Mesh {
    let uvs = primitives::chart_uvs(faces.len());
    let mut m = Mesh::new(vertices, faces, uvs, None).expect("fixture mesh");
    m.normalize_to_unit_sphere();
    m.scaled(0.4)
}

fn merged(parts: &[(Mesh, Vec3)]) -> Mesh {
    let (mut v, mut f) = (Vec::new(), Vec::new());
    for (m, off) in parts {
        let base = v.len() as u32;
        v.extend(m.vertices.iter().map(|&p| vec3::add(p, *off)));
        f.extend(m.faces.iter().map(|t| t.map(|i| i + base)));
    }
    rebuild(v, f)
}

/// Ten meshes of at most 200 faces, normalized to radius 0.4: convex,
/// concave, open, overlapping and noisy shapes.
pub fn fixture_meshes() -> Vec<(&'static str, Mesh)> {
    let norm = |mut m: Mesh| {
        m.normalize_to_unit_sphere();
        m.scaled(0.4)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let ico1 = primitives::icosphere(1);
    let bumpy: Vec<Vec3> = ico1
        .vertices
        .iter()
        .map(|&p| vec3::scale(p, rng.gen_range(0.75..1.25)))
        .collect();
    let squashed: Vec<Vec3> = ico1.vertices.iter().map(|p| [p[0] * 1.6, p[1] * 0.5, p[2]]).collect();
    let cube = primitives::cube(0.5);
    vec![
        ("icosahedron", norm(primitives::icosphere(0))),
        ("icosphere1", norm(ico1.clone())),
        ("uvsphere", norm(primitives::uv_sphere(12, 8))),
        ("cube", norm(cube.clone())),
        ("quad", primitives::quad(0.35)),
        ("bumpy", rebuild(bumpy, ico1.faces.clone())),
        ("ellipsoid", rebuild(squashed, ico1.faces.clone())),
        ("two_cubes", merged(&[(cube.clone(), [0.0; 3]), (cube.clone(), [0.6, 0.3, -0.4])])),
        ("stack", merged(&[(cube.clone(), [0.0; 3]), (primitives::cube(0.25), [0.0, 0.75, 0.0]), (primitives::icosphere(0), [0.0, -1.2, 0.0])])),
        ("crossed_quads", {
            let q = primitives::quad(0.5);
            let turned: Vec<Vec3> = q.vertices.iter().map(|p| [p[2], p[1], -p[0]]).collect();
            let back: Vec<Vec3> = q.vertices.iter().map(|p| [-p[0], p[1], -p[2]]).collect();
            let mut v = q.vertices.clone();
            v.extend(turned);
            v.extend(back);
            let mut f = q.faces.clone();
            f.extend(q.faces.iter().map(|t| t.map(|i| i + 4)));
            f.extend(q.faces.iter().map(|t| t.map(|i| i + 8)));
            rebuild(v, f)
        }),
    ]
}
