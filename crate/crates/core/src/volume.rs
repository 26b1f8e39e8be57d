//! Volumetric spherical-Gaussian lighting grid with a log-projected world
//! mapping.
//!
//! Each voxel stores a radiance lobe G(l) = c e^(-(1 - l.mu)/sigma^2) and an
//! opacity alpha. The grid covers a camera-centered box (default 300x300x80
//! meters at 256x256x64 voxels) with resolution concentrated near the camera
//! by an exponential warp per axis.

use crate::error::{Error, Result};
use crate::geometry::PinholeCamera;
use crate::image::{Image, RgbImage, ScalarImage};
use crate::math::{Rgb, Vec3};
use serde::{Deserialize, Serialize};

pub const MIN_SIGMA: f64 = 1e-3;

/// Full-scale default grid resolution covering the 300x300x80 m volume.
pub const DEFAULT_GRID_DIMS: (usize, usize, usize) = (256, 256, 64);

/// Log-projected mapping between normalized grid coordinates in [-1,1]^3 and
/// world meters. Per axis:
///
///   world = sign(t) * R * (e^(a|t|) - 1) / (e^a - 1)
///
/// with R the half extent; the z axis is affine-shifted into `z_range`.
/// `origin` anchors the volume in the world (the camera position).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogProjection {
    pub half_extent_xy: f64,
    /// Vertical range in meters relative to `origin` (camera height).
    pub z_range: (f64, f64),
    pub curvature: f64,
    pub origin: Vec3,
}

impl Default for LogProjection {
    fn default() -> Self {
        LogProjection {
            half_extent_xy: 150.0,
            z_range: (-10.0, 70.0),
            curvature: 3.0,
            origin: Vec3::ZERO,
        }
    }
}

impl LogProjection {
    pub fn at_origin(origin: Vec3) -> Self {
        LogProjection { origin, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_extent_xy > 0.0) {
            return Err(Error::invalid("half_extent_xy must be positive"));
        }
        if !(self.z_range.1 > self.z_range.0) {
            return Err(Error::invalid("z_range must be increasing"));
        }
        if !(self.curvature > 0.0) {
            return Err(Error::invalid("curvature must be positive"));
        }
        Ok(())
    }

    fn z_mid(&self) -> f64 {
        (self.z_range.0 + self.z_range.1) / 2.0
    }

    fn z_half(&self) -> f64 {
        (self.z_range.1 - self.z_range.0) / 2.0
    }

    /// Odd monotone warp of [-1,1] onto [-1,1].
    fn warp(&self, t: f64) -> f64 {
        let a = self.curvature;
        t.signum() * ((a * t.abs()).exp() - 1.0) / (a.exp() - 1.0)
    }

    fn unwarp(&self, u: f64) -> f64 {
        let a = self.curvature;
        u.signum() * (u.abs() * (a.exp() - 1.0)).ln_1p() / a
    }

    /// Normalized coordinate in [-1,1]^3 to world meters.
    pub fn norm_to_world(&self, t: Vec3) -> Result<Vec3> {
        for axis in 0..3 {
            if !(-1.0..=1.0).contains(&t[axis]) {
                return Err(Error::invalid(format!("normalized coordinate {t:?} outside [-1,1]^3")));
            }
        }
        Ok(Vec3::new(
            self.origin.x + self.warp(t.x) * self.half_extent_xy,
            self.origin.y + self.warp(t.y) * self.half_extent_xy,
            self.origin.z + self.z_mid() + self.warp(t.z) * self.z_half(),
        ))
    }

    /// World meters to normalized coordinates; None outside the box.
    pub fn world_to_norm(&self, p: Vec3) -> Option<Vec3> {
        if !p.is_finite() {
            return None;
        }
        let ux = (p.x - self.origin.x) / self.half_extent_xy;
        let uy = (p.y - self.origin.y) / self.half_extent_xy;
        let uz = (p.z - self.origin.z - self.z_mid()) / self.z_half();
        if ux.abs() > 1.0 || uy.abs() > 1.0 || uz.abs() > 1.0 {
            return None;
        }
        Some(Vec3::new(self.unwarp(ux), self.unwarp(uy), self.unwarp(uz)))
    }

    /// World-space AABB covered by the volume.
    pub fn world_box(&self) -> (Vec3, Vec3) {
        let r = self.half_extent_xy;
        (
            Vec3::new(self.origin.x - r, self.origin.y - r, self.origin.z + self.z_range.0),
            Vec3::new(self.origin.x + r, self.origin.y + r, self.origin.z + self.z_range.1),
        )
    }
}

/// One voxel of the lighting volume: RGB lobe amplitude, lobe axis,
/// sharpness, opacity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VsgVoxel {
    pub c: Rgb,
    pub mu: Vec3,
    pub sigma: f64,
    pub alpha: f64,
}

impl VsgVoxel {
    pub const EMPTY: VsgVoxel = VsgVoxel {
        c: Rgb::BLACK,
        mu: Vec3 { x: 0.0, y: 0.0, z: 1.0 },
        sigma: 1.0,
        alpha: 0.0,
    };

    /// Lobe radiance toward direction `d` (unit): c e^(-(1 - d.mu)/sigma^2).
    pub fn lobe(&self, d: Vec3) -> Rgb {
        self.c * (-(1.0 - d.dot(self.mu)) / (self.sigma * self.sigma)).exp()
    }

    pub fn satisfies_invariants(&self) -> bool {
        self.c.is_finite()
            && self.c.is_non_negative()
            && (self.mu.norm() - 1.0).abs() < 1e-6
            && self.sigma >= MIN_SIGMA
            && (0.0..=1.0).contains(&self.alpha)
    }

    /// Clamp / renormalize back onto the valid set.
    pub fn sanitized(&self) -> VsgVoxel {
        VsgVoxel {
            c: self.c.map(|x| x.max(0.0)),
            mu: self.mu.normalized_or(Vec3::Z),
            sigma: self.sigma.max(MIN_SIGMA),
            alpha: self.alpha.clamp(0.0, 1.0),
        }
    }
}

/// Dense X x Y x Z grid of [`VsgVoxel`] with its world mapping.
/// Voxel storage order: x fastest, then y, then z.
#[derive(Clone, Debug)]
pub struct VsgGrid {
    dims: (usize, usize, usize),
    pub voxels: Vec<VsgVoxel>,
    pub mapping: LogProjection,
}

impl VsgGrid {
    pub fn empty(dims: (usize, usize, usize), mapping: LogProjection) -> Result<VsgGrid> {
        if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
            return Err(Error::invalid("grid dims must be positive"));
        }
        mapping.validate()?;
        Ok(VsgGrid {
            dims,
            voxels: vec![VsgVoxel::EMPTY; dims.0 * dims.1 * dims.2],
            mapping,
        })
    }

    pub fn from_voxels(
        dims: (usize, usize, usize),
        voxels: Vec<VsgVoxel>,
        mapping: LogProjection,
    ) -> Result<VsgGrid> {
        if voxels.len() != dims.0 * dims.1 * dims.2 {
            return Err(Error::invalid("voxel count does not match dims"));
        }
        mapping.validate()?;
        Ok(VsgGrid { dims, voxels, mapping })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn voxel_count(&self) -> usize {
        self.voxels.len()
    }

    pub fn flat_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.dims.0 * (iy + self.dims.1 * iz)
    }

    /// True when every voxel is fully transparent; lets radiance queries skip
    /// ray marching.
    pub fn is_vacuum(&self) -> bool {
        self.voxels.iter().all(|v| v.alpha == 0.0)
    }

    /// Nearest-neighbor voxel index containing the world point, if inside.
    pub fn world_to_voxel(&self, p: Vec3) -> Option<(usize, usize, usize)> {
        let t = self.mapping.world_to_norm(p)?;
        Some((
            norm_to_index(t.x, self.dims.0),
            norm_to_index(t.y, self.dims.1),
            norm_to_index(t.z, self.dims.2),
        ))
    }

    pub fn voxel_at(&self, p: Vec3) -> Option<&VsgVoxel> {
        self.world_to_voxel(p)
            .map(|(ix, iy, iz)| &self.voxels[self.flat_index(ix, iy, iz)])
    }

    /// Normalized coordinate of a voxel center.
    pub fn voxel_center_norm(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        Vec3::new(
            index_to_norm(ix, self.dims.0),
            index_to_norm(iy, self.dims.1),
            index_to_norm(iz, self.dims.2),
        )
    }

    pub fn all_satisfy_invariants(&self) -> bool {
        self.voxels.iter().all(|v| v.satisfies_invariants())
    }
}

fn norm_to_index(t: f64, n: usize) -> usize {
    let i = ((t + 1.0) * 0.5 * n as f64).floor() as i64;
    i.clamp(0, n as i64 - 1) as usize
}

fn index_to_norm(i: usize, n: usize) -> f64 {
    -1.0 + (i as f64 + 0.5) * 2.0 / n as f64
}

/// Seed a grid from an image: every valid depth pixel deposits its RGB as a
/// broad lobe oriented back toward the camera (mu = -view direction,
/// sigma = 1, alpha = 1). Voxels hit by several pixels average their values.
/// Returns the grid and the number of deposited pixels.
pub fn unproject_image(
    cam: &PinholeCamera,
    image: &RgbImage,
    depth: &ScalarImage,
    dims: (usize, usize, usize),
    mapping: LogProjection,
) -> Result<(VsgGrid, usize)> {
    if image.width() != cam.width || image.height() != cam.height {
        return Err(Error::SizeMismatch {
            expected_w: cam.width,
            expected_h: cam.height,
            got_w: image.width(),
            got_h: image.height(),
        });
    }
    if !depth.same_size(image) {
        return Err(Error::SizeMismatch {
            expected_w: image.width(),
            expected_h: image.height(),
            got_w: depth.width(),
            got_h: depth.height(),
        });
    }
    let mut grid = VsgGrid::empty(dims, mapping)?;
    let mut color_sum = vec![Rgb::BLACK; grid.voxel_count()];
    let mut dir_sum = vec![Vec3::ZERO; grid.voxel_count()];
    let mut count = vec![0u32; grid.voxel_count()];
    let mut deposited = 0usize;

    for (x, y, &d) in depth.enumerate() {
        if !crate::geometry::depth_valid(d) {
            continue;
        }
        let px = x as f64 + 0.5;
        let py = y as f64 + 0.5;
        let p = cam.point_at_depth(px, py, d);
        let Some((ix, iy, iz)) = grid.world_to_voxel(p) else {
            continue;
        };
        let view = (p - cam.origin()).normalized_or(cam.forward());
        let idx = grid.flat_index(ix, iy, iz);
        color_sum[idx] += *image.get(x, y);
        dir_sum[idx] += -view;
        count[idx] += 1;
        deposited += 1;
    }

    for idx in 0..grid.voxel_count() {
        if count[idx] > 0 {
            grid.voxels[idx] = VsgVoxel {
                c: color_sum[idx] / count[idx] as f64,
                mu: dir_sum[idx].normalized_or(Vec3::Z),
                sigma: 1.0,
                alpha: 1.0,
            };
        }
    }
    Ok((grid, deposited))
}

/// Expected depth from alpha compositing along each pixel ray:
/// D = sum_k tau_{k-1} alpha_k d_k + tau_K d_far, where d_k is the sample
/// distance and d_far the grid exit distance. Rays missing the volume
/// entirely render 0.
pub fn render_depth(grid: &VsgGrid, cam: &PinholeCamera, samples_per_ray: usize) -> ScalarImage {
    let k_count = samples_per_ray.max(1);
    Image::from_fn(cam.width, cam.height, |x, y| {
        let ray = cam
            .pixel_ray(x as f64 + 0.5, y as f64 + 0.5)
            .expect("pixel center in bounds");
        let (bb_min, bb_max) = grid.mapping.world_box();
        let Some((t0, t1)) = super::lightfield::ray_box_span(bb_min, bb_max, ray.origin, ray.direction)
        else {
            return 0.0;
        };
        let dt = (t1 - t0) / k_count as f64;
        let mut depth = 0.0;
        let mut tau = 1.0;
        for k in 0..k_count {
            let t = t0 + (k as f64 + 0.5) * dt;
            let p = ray.origin + ray.direction * t;
            if let Some(v) = grid.voxel_at(p) {
                if v.alpha > 0.0 {
                    depth += tau * v.alpha * t;
                    tau *= 1.0 - v.alpha;
                }
            }
        }
        depth + tau * t1
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::RigidTransform;
    use proptest::prelude::*;

    fn small_mapping() -> LogProjection {
        LogProjection {
            half_extent_xy: 10.0,
            z_range: (-2.0, 6.0),
            curvature: 3.0,
            origin: Vec3::new(0.0, 0.0, 1.5),
        }
    }

    #[test]
    fn norm_center_maps_to_z_midpoint() {
        let m = small_mapping();
        let p = m.norm_to_world(Vec3::ZERO).unwrap();
        assert!((p.x - 0.0).abs() < 1e-12);
        assert!((p.y - 0.0).abs() < 1e-12);
        assert!((p.z - (1.5 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn norm_boundary_maps_to_half_extent() {
        let m = small_mapping();
        let p = m.norm_to_world(Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((p.x - 10.0).abs() < 1e-9);
        assert!(m.norm_to_world(Vec3::new(1.1, 0.0, 0.0)).is_err());
    }

    #[test]
    fn warp_is_denser_near_origin() {
        let m = small_mapping();
        let h = 1e-6;
        let d0 = (m.warp(h) - m.warp(0.0)) / h;
        let d1 = (m.warp(1.0) - m.warp(1.0 - h)) / h;
        assert!(d0 < d1, "derivative at 0 ({d0}) should be below derivative at 1 ({d1})");
    }

    #[test]
    fn voxel_center_roundtrip_4x4x4() {
        let grid = VsgGrid::empty((4, 4, 4), small_mapping()).unwrap();
        for iz in 0..4 {
            for iy in 0..4 {
                for ix in 0..4 {
                    let t = grid.voxel_center_norm(ix, iy, iz);
                    let p = grid.mapping.norm_to_world(t).unwrap();
                    assert_eq!(grid.world_to_voxel(p), Some((ix, iy, iz)));
                }
            }
        }
    }

    #[test]
    fn far_point_is_outside() {
        let grid = VsgGrid::empty((4, 4, 4), small_mapping()).unwrap();
        assert_eq!(grid.world_to_voxel(Vec3::new(10_000.0, 0.0, 0.0)), None);
    }

    #[test]
    fn camera_origin_maps_to_xy_center() {
        let grid = VsgGrid::empty((4, 4, 4), small_mapping()).unwrap();
        let (ix, iy, _) = grid.world_to_voxel(grid.mapping.origin).unwrap();
        assert_eq!((ix, iy), (2, 2));
    }

    fn test_cam() -> PinholeCamera {
        PinholeCamera::new(4.0, 4.0, 2.0, 2.0, 4, 4, RigidTransform::IDENTITY).unwrap()
    }

    #[test]
    fn unproject_single_pixel() {
        let cam = test_cam();
        let mut img = Image::filled(4, 4, Rgb::BLACK);
        *img.get_mut(1, 2) = Rgb::new(0.3, 0.5, 0.7);
        let mut depth = Image::filled(4, 4, f64::NAN);
        *depth.get_mut(1, 2) = 4.0;
        let mapping = LogProjection {
            half_extent_xy: 10.0,
            z_range: (-10.0, 10.0),
            curvature: 3.0,
            origin: Vec3::ZERO,
        };
        let (grid, n) = unproject_image(&cam, &img, &depth, (4, 4, 4), mapping).unwrap();
        assert_eq!(n, 1);
        let occupied: Vec<_> = grid.voxels.iter().filter(|v| v.alpha > 0.0).collect();
        assert_eq!(occupied.len(), 1);
        assert_eq!(occupied[0].alpha, 1.0);
        assert_eq!(occupied[0].c, Rgb::new(0.3, 0.5, 0.7));
        // Lobe points back toward the camera.
        assert!(occupied[0].mu.dot(Vec3::Z) < 0.0);
    }

    #[test]
    fn unproject_outside_grid_is_empty() {
        let cam = test_cam();
        let img = Image::filled(4, 4, Rgb::WHITE);
        let depth = Image::filled(4, 4, 500.0);
        let (grid, n) =
            unproject_image(&cam, &img, &depth, (4, 4, 4), small_mapping()).unwrap();
        assert_eq!(n, 0);
        assert!(grid.is_vacuum());
    }

    #[test]
    fn unproject_counts_in_grid_pixels() {
        let cam = test_cam();
        let img = Image::filled(4, 4, Rgb::WHITE);
        let mut depth = Image::filled(4, 4, 2.0);
        *depth.get_mut(0, 0) = -1.0;
        *depth.get_mut(3, 3) = f64::NAN;
        let mapping = LogProjection {
            half_extent_xy: 20.0,
            z_range: (-20.0, 20.0),
            curvature: 3.0,
            origin: Vec3::ZERO,
        };
        let (grid, n) = unproject_image(&cam, &img, &depth, (8, 8, 8), mapping).unwrap();
        assert_eq!(n, 14);
        let total: u32 = grid
            .voxels
            .iter()
            .map(|v| if v.alpha > 0.0 { 1 } else { 0 })
            .sum();
        assert!(total >= 1 && total as usize <= 14);
    }

    #[test]
    fn unproject_size_mismatch() {
        let cam = test_cam();
        let img = Image::filled(5, 4, Rgb::WHITE);
        let depth = Image::filled(5, 4, 2.0);
        assert!(unproject_image(&cam, &img, &depth, (4, 4, 4), small_mapping()).is_err());
    }

    #[test]
    fn depth_of_empty_grid_is_exit_distance() {
        let cam = test_cam();
        let mapping = LogProjection {
            half_extent_xy: 10.0,
            z_range: (-10.0, 10.0),
            curvature: 3.0,
            origin: Vec3::ZERO,
        };
        let grid = VsgGrid::empty((4, 4, 4), mapping).unwrap();
        let depth = render_depth(&grid, &cam, 16);
        for (x, y, &d) in depth.enumerate() {
            let ray = cam.pixel_ray(x as f64 + 0.5, y as f64 + 0.5).unwrap();
            let (bb_min, bb_max) = mapping.world_box();
            let (_, t1) =
                crate::lightfield::ray_box_span(bb_min, bb_max, ray.origin, ray.direction).unwrap();
            assert!((d - t1).abs() < 1e-12);
        }
    }

    #[test]
    fn depth_of_opaque_voxel_is_its_distance() {
        let cam = test_cam();
        let mapping = LogProjection {
            half_extent_xy: 10.0,
            z_range: (-10.0, 10.0),
            curvature: 3.0,
            origin: Vec3::ZERO,
        };
        // Make every voxel opaque so the first sample terminates the ray.
        let mut grid = VsgGrid::empty((2, 2, 2), mapping).unwrap();
        for v in &mut grid.voxels {
            v.alpha = 1.0;
        }
        let depth = render_depth(&grid, &cam, 8);
        // First sample midpoint: t0 = 0 (origin inside), dt = t1/8, d = dt/2.
        for (x, y, &d) in depth.enumerate() {
            let ray = cam.pixel_ray(x as f64 + 0.5, y as f64 + 0.5).unwrap();
            let (bb_min, bb_max) = mapping.world_box();
            let (t0, t1) =
                crate::lightfield::ray_box_span(bb_min, bb_max, ray.origin, ray.direction).unwrap();
            let expected = t0 + 0.5 * (t1 - t0) / 8.0;
            assert!((d - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn depth_matches_per_sample_summation_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let cam = test_cam();
        let mapping = LogProjection {
            half_extent_xy: 10.0,
            z_range: (-10.0, 10.0),
            curvature: 3.0,
            origin: Vec3::ZERO,
        };
        let mut grid = VsgGrid::empty((3, 3, 3), mapping).unwrap();
        for v in &mut grid.voxels {
            v.alpha = rng.gen_range(0.0..1.0);
        }
        let k = 16;
        let depth = render_depth(&grid, &cam, k);
        for (x, y, &d) in depth.enumerate() {
            let ray = cam.pixel_ray(x as f64 + 0.5, y as f64 + 0.5).unwrap();
            let (bb_min, bb_max) = mapping.world_box();
            let (t0, t1) =
                crate::lightfield::ray_box_span(bb_min, bb_max, ray.origin, ray.direction).unwrap();
            // Independent accumulation of sum tau_{k-1} alpha_k d_k + tau d_far.
            let dt = (t1 - t0) / k as f64;
            let mut expect = 0.0;
            let mut tau = 1.0;
            for i in 0..k {
                let t = t0 + (i as f64 + 0.5) * dt;
                if let Some(v) = grid.voxel_at(ray.origin + ray.direction * t) {
                    expect += tau * v.alpha * t;
                    tau *= 1.0 - v.alpha;
                }
            }
            expect += tau * t1;
            assert_eq!(d, expect, "pixel ({x},{y})");
        }
    }

    proptest! {
        #[test]
        fn warp_roundtrip(t in -1.0f64..1.0) {
            let m = small_mapping();
            let u = m.warp(t);
            prop_assert!((m.unwarp(u) - t).abs() < 1e-9);
        }

        #[test]
        fn norm_world_roundtrip(
            tx in -1.0f64..1.0,
            ty in -1.0f64..1.0,
            tz in -1.0f64..1.0,
        ) {
            let m = small_mapping();
            let t = Vec3::new(tx, ty, tz);
            let p = m.norm_to_world(t).unwrap();
            let back = m.world_to_norm(p).unwrap();
            prop_assert!((back - t).norm() < 1e-9);
        }
    }
}
