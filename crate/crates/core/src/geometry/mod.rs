//! Rays, pinhole camera, equirectangular mapping, and depth unprojection.
//!
//! World frame: right-handed, +z up. Camera rays use the x-right / y-down /
//! z-forward convention in the camera frame; the pose maps camera to world.

mod bvh;
pub mod mesh;

pub use bvh::{Bvh, Hit, RAY_EPSILON};
pub use mesh::{load_obj, parse_obj, MeshData, TriMesh};

use crate::error::{Error, Result};
use crate::image::ScalarImage;
use crate::math::{Mat3, RigidTransform, Vec3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Ray with unit direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        debug_assert!((direction.norm() - 1.0).abs() < 1e-6, "ray direction not unit");
        Ray { origin, direction }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Pinhole camera with a camera-to-world pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub pose: RigidTransform,
}

impl PinholeCamera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        pose: RigidTransform,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::invalid(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::invalid(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(PinholeCamera { fx, fy, cx, cy, width, height, pose })
    }

    /// Standard street-scene pose: camera at `(0, 0, height_above_ground)`,
    /// looking along world +y with world +z up (image x maps to world +x,
    /// image y to world -z).
    pub fn street_pose(height_above_ground: f64) -> RigidTransform {
        RigidTransform::new(
            Mat3::from_cols(Vec3::X, -Vec3::Z, Vec3::Y),
            Vec3::new(0.0, 0.0, height_above_ground),
        )
    }

    pub fn origin(&self) -> Vec3 {
        self.pose.translation
    }

    pub fn forward(&self) -> Vec3 {
        self.pose.rotation.col(2)
    }

    /// World-space ray through the continuous image coordinate `(px, py)`.
    pub fn pixel_ray(&self, px: f64, py: f64) -> Result<Ray> {
        if !(0.0..self.width as f64).contains(&px) || !(0.0..self.height as f64).contains(&py) {
            return Err(Error::OutOfBounds { x: px, y: py, w: self.width, h: self.height });
        }
        let dir_cam = Vec3::new((px - self.cx) / self.fx, (py - self.cy) / self.fy, 1.0).normalized();
        Ok(Ray::new(self.origin(), self.pose.apply_dir(dir_cam)))
    }

    /// World point at camera z-depth `depth` seen through `(px, py)`.
    pub fn point_at_depth(&self, px: f64, py: f64, depth: f64) -> Vec3 {
        let p_cam = Vec3::new(
            (px - self.cx) / self.fx * depth,
            (py - self.cy) / self.fy * depth,
            depth,
        );
        self.pose.apply_point(p_cam)
    }

    /// Project a world point; returns `(px, py, z_depth)` or None behind the
    /// camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let c = self.pose.invert_point(p);
        if c.z <= 0.0 {
            return None;
        }
        Some((self.cx + self.fx * c.x / c.z, self.cy + self.fy * c.y / c.z, c.z))
    }

    /// Camera z-depth of a world point (may be negative behind the camera).
    pub fn z_depth(&self, p: Vec3) -> f64 {
        self.pose.invert_point(p).z
    }
}

/// Whether a depth sample carries valid geometry.
pub fn depth_valid(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

/// One world point per valid depth pixel, at the pixel center ray.
pub fn unproject_depth(cam: &PinholeCamera, depth: &ScalarImage) -> Result<Vec<Vec3>> {
    if depth.width() != cam.width || depth.height() != cam.height {
        return Err(Error::SizeMismatch {
            expected_w: cam.width,
            expected_h: cam.height,
            got_w: depth.width(),
            got_h: depth.height(),
        });
    }
    let mut points = Vec::new();
    for (x, y, &d) in depth.enumerate() {
        if depth_valid(d) {
            points.push(cam.point_at_depth(x as f64 + 0.5, y as f64 + 0.5, d));
        }
    }
    Ok(points)
}

/// Map a unit direction to a continuous equirect pixel coordinate.
///
/// Azimuth covers x in [0, w); the +z pole maps to the y = 0 row and the
/// horizon to y = h/2.
pub fn equirect_dir_to_px(l: Vec3, w: usize, h: usize) -> (f64, f64) {
    let azimuth = l.y.atan2(l.x);
    let polar = l.z.clamp(-1.0, 1.0).acos();
    let mut x = (azimuth / (2.0 * PI) + 0.5) * w as f64;
    if x >= w as f64 {
        x -= w as f64;
    }
    (x, polar / PI * h as f64)
}

/// Inverse of [`equirect_dir_to_px`] for a continuous pixel coordinate.
pub fn equirect_px_to_dir(px: f64, py: f64, w: usize, h: usize) -> Vec3 {
    let azimuth = (px / w as f64 - 0.5) * 2.0 * PI;
    let polar = py / h as f64 * PI;
    let (sp, cp) = polar.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    Vec3::new(sp * ca, sp * sa, cp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use proptest::prelude::*;

    fn identity_cam(w: usize, h: usize) -> PinholeCamera {
        PinholeCamera::new(
            w as f64 / 2.0,
            h as f64 / 2.0,
            w as f64 / 2.0,
            h as f64 / 2.0,
            w,
            h,
            RigidTransform::IDENTITY,
        )
        .unwrap()
    }

    #[test]
    fn principal_point_looks_forward() {
        let cam = identity_cam(8, 8);
        let r = cam.pixel_ray(cam.cx, cam.cy).unwrap();
        assert!((r.direction - Vec3::Z).norm() < 1e-12);
    }

    #[test]
    fn one_focal_length_off_axis_is_45_degrees() {
        let cam = PinholeCamera::new(2.0, 2.0, 4.0, 4.0, 8, 8, RigidTransform::IDENTITY).unwrap();
        let r = cam.pixel_ray(cam.cx + cam.fx, cam.cy).unwrap();
        let expected = Vec3::new(1.0, 0.0, 1.0).normalized();
        assert!((r.direction - expected).norm() < 1e-12);
    }

    #[test]
    fn out_of_bounds_pixel_rejected() {
        let cam = identity_cam(8, 8);
        assert!(cam.pixel_ray(-0.1, 4.0).is_err());
        assert!(cam.pixel_ray(4.0, 8.0).is_err());
    }

    #[test]
    fn all_pixel_rays_face_forward() {
        let cam = PinholeCamera::new(3.0, 3.0, 4.0, 2.0, 8, 4, PinholeCamera::street_pose(1.5))
            .unwrap();
        let fwd = cam.forward();
        for y in 0..4 {
            for x in 0..8 {
                let r = cam.pixel_ray(x as f64 + 0.5, y as f64 + 0.5).unwrap();
                assert!(r.direction.dot(fwd) > 0.0);
            }
        }
    }

    #[test]
    fn unproject_principal_point_unit_depth() {
        // Principal point at a pixel center so a pixel ray hits it exactly.
        let cam = PinholeCamera::new(4.0, 4.0, 4.5, 4.5, 8, 8, RigidTransform::IDENTITY).unwrap();
        let mut depth = Image::filled(8, 8, f64::NAN);
        *depth.get_mut(4, 4) = 1.0;
        let pts = unproject_depth(&cam, &depth).unwrap();
        assert_eq!(pts.len(), 1);
        assert!((pts[0] - Vec3::Z).norm() < 1e-12);
    }

    #[test]
    fn unproject_all_invalid_is_empty() {
        let cam = identity_cam(4, 4);
        let depth = Image::filled(4, 4, -1.0);
        assert!(unproject_depth(&cam, &depth).unwrap().is_empty());
    }

    #[test]
    fn unproject_size_mismatch_rejected() {
        let cam = identity_cam(4, 4);
        let depth = Image::filled(5, 4, 1.0);
        assert!(unproject_depth(&cam, &depth).is_err());
    }

    #[test]
    fn unprojected_plane_is_coplanar() {
        // Ground plane z = 0 seen from the street camera: depth along each
        // pixel ray below the horizon row.
        let cam = PinholeCamera::new(8.0, 8.0, 8.0, 4.5, 16, 9, PinholeCamera::street_pose(1.5))
            .unwrap();
        let mut depth = Image::filled(16, 9, f64::NAN);
        for y in 0..9 {
            for x in 0..16 {
                let r = cam.pixel_ray(x as f64 + 0.5, y as f64 + 0.5).unwrap();
                if r.direction.z < -1e-3 {
                    let t = -cam.origin().z / r.direction.z;
                    let p = r.at(t);
                    // Store camera z-depth, not ray length.
                    *depth.get_mut(x, y) = cam.z_depth(p);
                }
            }
        }
        let pts = unproject_depth(&cam, &depth).unwrap();
        assert!(!pts.is_empty());
        for p in pts {
            assert!(p.z.abs() < 1e-5, "plane residual {}", p.z);
        }
    }

    #[test]
    fn equirect_poles_and_equator() {
        let (_, y) = equirect_dir_to_px(Vec3::Z, 256, 64);
        assert!(y.abs() < 1e-9);
        let (_, y) = equirect_dir_to_px(Vec3::X, 256, 64);
        assert!((y - 32.0).abs() < 1e-9);
        let (_, y) = equirect_dir_to_px(-Vec3::Z, 256, 64);
        assert!((y - 64.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn equirect_roundtrip(az in -PI..PI, zf in -0.95f64..0.95) {
            let polar = zf.acos();
            let l = Vec3::new(polar.sin() * az.cos(), polar.sin() * az.sin(), zf);
            let (px, py) = equirect_dir_to_px(l, 256, 64);
            prop_assert!((0.0..256.0).contains(&px));
            let back = equirect_px_to_dir(px, py, 256, 64);
            let angle = back.dot(l).clamp(-1.0, 1.0).acos();
            prop_assert!(angle < 0.5 * (2.0 * PI / 256.0));
        }

        #[test]
        fn project_unproject_roundtrip(px in 0.0f64..16.0, py in 0.0f64..9.0, d in 0.5f64..50.0) {
            let cam = PinholeCamera::new(
                10.0, 11.0, 8.0, 4.5, 16, 9, PinholeCamera::street_pose(1.4),
            ).unwrap();
            let p = cam.point_at_depth(px, py, d);
            let (qx, qy, qd) = cam.project(p).unwrap();
            prop_assert!((qx - px).abs() < 1e-6);
            prop_assert!((qy - py).abs() < 1e-6);
            prop_assert!((qd - d).abs() < 1e-6);
        }
    }
}
