//! Meshes, cameras and the software rasterizer.

pub mod camera;
pub mod mesh;
pub mod obj;
pub mod primitives;
pub mod raster;
pub mod vec3;

pub use camera::{viewpoint_to_camera, Camera, Viewpoint, DEFAULT_FOV_DEG};
pub use mesh::Mesh;
pub use obj::{load_mesh, parse_obj, write_obj};
pub use raster::{rasterize, RasterBuffers, NO_FACE};

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("OBJ parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("face at line {line} has no texture coordinate; UVs are required")]
    MissingUv { line: usize },
    #[error("invalid geometry: {0}")]
    Invalid(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}
