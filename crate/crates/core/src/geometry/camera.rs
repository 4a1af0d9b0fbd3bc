use serde::{Deserialize, Serialize};

use super::vec3::{self, Vec3};
use super::GeometryError;

pub const DEFAULT_FOV_DEG: f64 = 45.0;
const NEAR: f64 = 1e-3;
const FAR: f64 = 100.0;

/// Spherical camera placement: azimuth about +Y (0° on +Z, 90° on +X),
/// elevation above the XZ plane, distance from the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub azimuth: f64,
    pub elevation: f64,
    pub radius: f64,
}

impl Viewpoint {
    /// Wraps the azimuth into `[0,360)`; rejects elevations outside
    /// `[-90,90]` and non-positive radii.
    pub fn new(azimuth: f64, elevation: f64, radius: f64) -> Result<Self, GeometryError> {
        if !(-90.0..=90.0).contains(&elevation) {
            return Err(GeometryError::Invalid(format!("elevation {elevation} outside [-90,90]")));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GeometryError::Invalid(format!("radius {radius} must be positive")));
        }
        if !azimuth.is_finite() {
            return Err(GeometryError::Invalid("non-finite azimuth".into()));
        }
        Ok(Self {
            azimuth: azimuth.rem_euclid(360.0),
            elevation,
            radius,
        })
    }

    pub fn position(&self) -> Vec3 {
        let (t, p) = (self.azimuth.to_radians(), self.elevation.to_radians());
        [
            self.radius * p.cos() * t.sin(),
            self.radius * p.sin(),
            self.radius * p.cos() * t.cos(),
        ]
    }
}

/// Pinhole camera looking at the origin.
///
/// Camera space is right-handed with the camera looking down `-Z`; `depth`
/// everywhere means the positive view-space distance along the optical axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub view: [[f64; 4]; 4],
    pub projection: [[f64; 4]; 4],
    pub width: usize,
    pub height: usize,
    pub fov_y_deg: f64,
}

pub fn viewpoint_to_camera(v: &Viewpoint, resolution: (usize, usize), fov_y_deg: f64) -> Camera {
    let position = v.position();
    let (t, p) = (v.azimuth.to_radians(), v.elevation.to_radians());
    let forward = vec3::normalize(vec3::scale(position, -1.0));
    // Tangent of increasing elevation: equals +Y on the horizon and stays
    // well defined at the poles.
    let up_hint = [-p.sin() * t.sin(), p.cos(), -p.sin() * t.cos()];
    let right = vec3::normalize(vec3::cross(forward, up_hint));
    let up = vec3::cross(right, forward);
    let back = vec3::scale(forward, -1.0);
    let view = [
        [right[0], right[1], right[2], -vec3::dot(right, position)],
        [up[0], up[1], up[2], -vec3::dot(up, position)],
        [back[0], back[1], back[2], -vec3::dot(back, position)],
        [0.0, 0.0, 0.0, 1.0],
    ];
    let (w, h) = resolution;
    let aspect = w as f64 / h as f64;
    let f = 1.0 / (fov_y_deg.to_radians() / 2.0).tan();
    let projection = [
        [f / aspect, 0.0, 0.0, 0.0],
        [0.0, f, 0.0, 0.0],
        [0.0, 0.0, (FAR + NEAR) / (NEAR - FAR), 2.0 * FAR * NEAR / (NEAR - FAR)],
        [0.0, 0.0, -1.0, 0.0],
    ];
    Camera {
        position,
        view,
        projection,
        width: w,
        height: h,
        fov_y_deg,
    }
}

impl Camera {
    pub fn near(&self) -> f64 {
        NEAR
    }

    pub fn to_camera_space(&self, p: Vec3) -> Vec3 {
        let m = &self.view;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + m[0][3],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + m[1][3],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + m[2][3],
        ]
    }

    /// Continuous pixel coordinates (x right, y down, pixel centers at
    /// `i + 0.5`) and depth; `None` behind the near plane.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let c = self.to_camera_space(p);
        let depth = -c[2];
        if depth < NEAR {
            return None;
        }
        let ndc_x = self.projection[0][0] * c[0] / depth;
        let ndc_y = self.projection[1][1] * c[1] / depth;
        Some((
            (ndc_x + 1.0) * 0.5 * self.width as f64,
            (1.0 - ndc_y) * 0.5 * self.height as f64,
            depth,
        ))
    }

    /// World-space unit direction of the ray through pixel coordinates `(x, y)`.
    pub fn ray_direction(&self, x: f64, y: f64) -> Vec3 {
        let ndc_x = 2.0 * x / self.width as f64 - 1.0;
        let ndc_y = 1.0 - 2.0 * y / self.height as f64;
        let cx = ndc_x / self.projection[0][0];
        let cy = ndc_y / self.projection[1][1];
        let m = &self.view;
        // Inverse rotation is the transpose of the view rotation.
        let d = [
            m[0][0] * cx + m[1][0] * cy - m[2][0],
            m[0][1] * cx + m[1][1] * cy - m[2][1],
            m[0][2] * cx + m[1][2] * cy - m[2][2],
        ];
        vec3::normalize(d)
    }

    /// `|cos|` between the surface normal and the direction to the camera.
    pub fn view_cosine(&self, point: Vec3, normal: Vec3) -> f64 {
        vec3::dot(vec3::normalize(vec3::sub(self.position, point)), normal).abs()
    }

    /// World-space size of one pixel at the given depth.
    pub fn pixel_footprint(&self, depth: f64) -> f64 {
        2.0 * depth * (self.fov_y_deg.to_radians() / 2.0).tan() / self.height as f64
    }
}
