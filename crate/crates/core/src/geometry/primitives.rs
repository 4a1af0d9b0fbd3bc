//! Procedural fixture meshes with ready-made UV layouts.

use std::collections::HashMap;

use super::mesh::Mesh;
use super::vec3::{self, Vec3};

/// Packs `n` triangles into a square grid of cells, two per cell, each
/// inset so neighbouring charts never share texels.
pub fn chart_uvs(n: usize) -> Vec<[[f64; 2]; 3]> {
    let cells = n.div_ceil(2).max(1);
    let g = (cells as f64).sqrt().ceil() as usize;
    let c = 1.0 / g as f64;
    let m = 0.12 * c;
    (0..n)
        .map(|i| {
            let cell = i / 2;
            let x0 = (cell % g) as f64 * c;
            // First row at the top of the image, i.e. high v.
            let y0 = 1.0 - (cell / g + 1) as f64 * c;
            if i % 2 == 0 {
                [[x0 + m, y0 + m], [x0 + c - 2.0 * m, y0 + m], [x0 + m, y0 + c - 2.0 * m]]
            } else {
                [
                    [x0 + c - m, y0 + c - m],
                    [x0 + 2.0 * m, y0 + c - m],
                    [x0 + c - m, y0 + 2.0 * m],
                ]
            }
        })
        .collect()
}

/// Square in the XY plane facing +Z, spanning `[-h,h]²`.
pub fn quad(h: f64) -> Mesh {
    Mesh::new(
        vec![[-h, -h, 0.0], [h, -h, 0.0], [h, h, 0.0], [-h, h, 0.0]],
        vec![[0, 1, 2], [0, 2, 3]],
        vec![
            [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]],
            [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        ],
        None,
    )
    .expect("quad is valid")
}

/// Unit icosahedron subdivided `level` times; 20·4^level faces, radial
/// normals, one UV chart per face.
pub fn icosphere(level: u32) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .into_iter()
    .map(vec3::normalize)
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                let p = vec3::normalize(vec3::scale(
                    vec3::add(verts[a as usize], verts[b as usize]),
                    0.5,
                ));
                verts.push(p);
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let uvs = chart_uvs(faces.len());
    let normals = verts.clone();
    Mesh::new(verts, faces, uvs, Some(normals)).expect("icosphere is valid")
}

/// Latitude/longitude sphere with an equirectangular UV map.
pub fn uv_sphere(segments: usize, rings: usize) -> Mesh {
    let (segments, rings) = (segments.max(3), rings.max(2));
    let mut verts = Vec::new();
    // Duplicate the seam column so every UV is a plain per-vertex lookup.
    for r in 0..=rings {
        let v = 1.0 - r as f64 / rings as f64;
        let lat = std::f64::consts::PI * (0.5 - r as f64 / rings as f64);
        for s in 0..=segments {
            let u = s as f64 / segments as f64;
            let lon = 2.0 * std::f64::consts::PI * u;
            verts.push((
                [lat.cos() * lon.sin(), lat.sin(), lat.cos() * lon.cos()],
                [u, v],
            ));
        }
    }
    let row = segments + 1;
    let mut faces = Vec::new();
    for r in 0..rings {
        for s in 0..segments {
            let a = (r * row + s) as u32;
            let b = a + 1;
            let c = a + row as u32;
            let d = c + 1;
            if r != 0 {
                faces.push([a, c, b]);
            }
            if r != rings - 1 {
                faces.push([b, c, d]);
            }
        }
    }
    let uvs = faces
        .iter()
        .map(|f| f.map(|i| verts[i as usize].1))
        .collect();
    let positions: Vec<Vec3> = verts.iter().map(|v| v.0).collect();
    let normals = positions.clone();
    Mesh::new(positions, faces, uvs, Some(normals)).expect("uv sphere is valid")
}

/// Axis-aligned cube `[-h,h]³`, 24 vertices (flat normals), 12 faces, each
/// side on its own cell of a 3×2 UV grid.
pub fn cube(h: f64) -> Mesh {
    // (normal, right, up) per side; right × up = normal keeps faces CCW outside.
    let sides: [(Vec3, Vec3, Vec3); 6] = [
        ([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
        ([0.0, 0.0, -1.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
        ([1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]),
        ([-1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]),
        ([0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]),
        ([0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
    ];
    let mut verts = Vec::new();
    let mut normals = Vec::new();
    let mut faces = Vec::new();
    let mut uvs = Vec::new();
    let (cw, ch) = (1.0 / 3.0, 0.5);
    let pad = 0.02;
    for (k, (n, r, u)) in sides.into_iter().enumerate() {
        let base = verts.len() as u32;
        let (u0, v0) = ((k % 3) as f64 * cw, (k / 3) as f64 * ch);
        let mut corner_uv = Vec::new();
        for (sr, su) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
            let p = vec3::add(
                vec3::scale(n, h),
                vec3::add(vec3::scale(r, sr * h), vec3::scale(u, su * h)),
            );
            verts.push(p);
            normals.push(n);
            corner_uv.push([
                u0 + pad + (sr + 1.0) / 2.0 * (cw - 2.0 * pad),
                v0 + pad + (su + 1.0) / 2.0 * (ch - 2.0 * pad),
            ]);
        }
        faces.push([base, base + 1, base + 2]);
        faces.push([base, base + 2, base + 3]);
        uvs.push([corner_uv[0], corner_uv[1], corner_uv[2]]);
        uvs.push([corner_uv[0], corner_uv[2], corner_uv[3]]);
    }
    Mesh::new(verts, faces, uvs, Some(normals)).expect("cube is valid")
}
