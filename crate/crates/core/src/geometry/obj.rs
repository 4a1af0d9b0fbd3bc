//! Wavefront OBJ reading and writing (positions, UVs, normals, polygon faces).

use std::fmt::Write as _;
use std::path::Path;

use super::mesh::Mesh;
use super::vec3::{self, Vec3};
use super::GeometryError;

fn parse_err(line: usize, msg: impl Into<String>) -> GeometryError {
    GeometryError::Parse {
        line,
        msg: msg.into(),
    }
}

fn floats<const N: usize>(
    parts: &mut std::str::SplitWhitespace<'_>,
    line: usize,
) -> Result<[f64; N], GeometryError> {
    let mut out = [0.0; N];
    for v in &mut out {
        let tok = parts
            .next()
            .ok_or_else(|| parse_err(line, format!("expected {N} numbers")))?;
        *v = tok
            .parse()
            .map_err(|_| parse_err(line, format!("bad number {tok:?}")))?;
    }
    Ok(out)
}

/// Resolves a 1-based (or negative, relative) OBJ index.
fn resolve(tok: &str, count: usize, line: usize, what: &str) -> Result<usize, GeometryError> {
    let i: i64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("bad {what} index {tok:?}")))?;
    let idx = match i {
        0 => return Err(parse_err(line, format!("{what} index 0 (OBJ indices are 1-based)"))),
        i if i > 0 => i as usize - 1,
        i => {
            let back = (-i) as usize;
            if back > count {
                return Err(parse_err(line, format!("{what} index {i} out of range")));
            }
            count - back
        }
    };
    if idx >= count {
        return Err(parse_err(
            line,
            format!("{what} index {i} out of range ({count} defined)"),
        ));
    }
    Ok(idx)
}

struct Corner {
    v: usize,
    vt: usize,
    vn: Option<usize>,
}

/// Parses OBJ text into a mesh. Polygons are fan-triangulated; every face
/// corner must carry a UV. The mesh is *not* normalized here.
pub fn parse_obj(text: &str) -> Result<Mesh, GeometryError> {
    let mut positions: Vec<Vec3> = Vec::new();
    let mut texcoords: Vec<[f64; 2]> = Vec::new();
    let mut obj_normals: Vec<Vec3> = Vec::new();
    let mut faces = Vec::new();
    let mut uvs = Vec::new();
    let mut corner_normals: Vec<[Option<usize>; 3]> = Vec::new();
    let mut clamped = false;

    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut parts = content.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        match tag {
            "v" => positions.push(floats::<3>(&mut parts, line)?),
            "vt" => {
                let [u, v] = floats::<2>(&mut parts, line)?;
                if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
                    clamped = true;
                }
                texcoords.push([u.clamp(0.0, 1.0), v.clamp(0.0, 1.0)]);
            }
            "vn" => obj_normals.push(floats::<3>(&mut parts, line)?),
            "f" => {
                let mut corners = Vec::new();
                for tok in parts {
                    let mut it = tok.split('/');
                    let v = resolve(it.next().unwrap_or(""), positions.len(), line, "vertex")?;
                    let vt = match it.next() {
                        Some(s) if !s.is_empty() => resolve(s, texcoords.len(), line, "uv")?,
                        _ => return Err(GeometryError::MissingUv { line }),
                    };
                    let vn = match it.next() {
                        Some(s) if !s.is_empty() => Some(resolve(s, obj_normals.len(), line, "normal")?),
                        _ => None,
                    };
                    corners.push(Corner { v, vt, vn });
                }
                if corners.len() < 3 {
                    return Err(parse_err(line, "face with fewer than 3 vertices"));
                }
                for k in 1..corners.len() - 1 {
                    let tri = [&corners[0], &corners[k], &corners[k + 1]];
                    faces.push(tri.map(|c| c.v as u32));
                    uvs.push(tri.map(|c| texcoords[c.vt]));
                    corner_normals.push(tri.map(|c| c.vn));
                }
            }
            _ => {}
        }
    }
    if clamped {
        log::warn!("OBJ texture coordinates outside [0,1] were clamped");
    }

    let normals = if !faces.is_empty() && corner_normals.iter().flatten().all(Option::is_some) {
        let mut acc = vec![[0.0; 3]; positions.len()];
        for (f, cn) in faces.iter().zip(&corner_normals) {
            for k in 0..3 {
                let n = obj_normals[cn[k].expect("checked")];
                acc[f[k] as usize] = vec3::add(acc[f[k] as usize], vec3::normalize(n));
            }
        }
        Some(acc)
    } else {
        None
    };
    // Positions unused by any face keep a zero normal; it is never sampled.
    Mesh::new(positions, faces, uvs, normals)
}

/// Reads an OBJ file and normalizes it into the unit sphere.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh, GeometryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| GeometryError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let mut mesh = parse_obj(&text)?;
    mesh.normalize_to_unit_sphere();
    Ok(mesh)
}

/// Serializes a mesh with one `vt`/`vn` per face corner / vertex.
pub fn write_obj(mesh: &Mesh, mtl: Option<(&str, &str)>) -> String {
    let mut out = String::new();
    if let Some((lib, _)) = mtl {
        let _ = writeln!(out, "mtllib {lib}");
    }
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
    }
    for n in &mesh.normals {
        let _ = writeln!(out, "vn {} {} {}", n[0], n[1], n[2]);
    }
    for uv in &mesh.uvs {
        for c in uv {
            let _ = writeln!(out, "vt {} {}", c[0], c[1]);
        }
    }
    if let Some((_, material)) = mtl {
        let _ = writeln!(out, "usemtl {material}");
    }
    for (fi, f) in mesh.faces.iter().enumerate() {
        let _ = write!(out, "f");
        for k in 0..3 {
            let v = f[k] + 1;
            let _ = write!(out, " {v}/{}/{v}", fi * 3 + k + 1);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRI: &str = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n";

    #[test]
    fn single_triangle() {
        let m = parse_obj(TRI).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
        for n in &m.normals {
            assert_eq!(*n, [0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn zero_index_reports_its_line() {
        let bad = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\n\nf 0/1 1/1 2/1\n";
        match parse_obj(bad) {
            Err(GeometryError::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_uv_is_an_error() {
        let bad = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";
        assert!(matches!(parse_obj(bad), Err(GeometryError::MissingUv { line: 4 })));
        let bad = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1\n";
        assert!(matches!(parse_obj(bad), Err(GeometryError::MissingUv { .. })));
    }

    #[test]
    fn quads_split_and_negative_indices_resolve() {
        let quad = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\nf -4/-4 -3/-3 -2/-2 -1/-1\n";
        let m = parse_obj(quad).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert_eq!(m.uvs[1], [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
    }

    #[test]
    fn supplied_normals_are_used() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 -2\nf 1/1/1 2/1/1 3/1/1\n";
        let m = parse_obj(text).unwrap();
        assert_eq!(m.normals[0], [0.0, 0.0, -1.0]);
    }

    #[test]
    fn out_of_range_and_garbage() {
        assert!(parse_obj("v 0 0 0\nvt 0 0\nf 1/1 2/1 3/1\n").is_err());
        assert!(parse_obj("v 0 zero 0\n").is_err());
        assert!(parse_obj("v 0 0 0\nvt 0 0\nf 1/1 1/1\n").is_err());
    }

    #[test]
    fn write_then_parse_preserves_geometry() {
        let m = parse_obj(TRI).unwrap();
        let back = parse_obj(&write_obj(&m, Some(("m.mtl", "mat")))).unwrap();
        assert_eq!(back, m);
    }
}
