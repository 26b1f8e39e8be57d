//! Hybrid radiance query: alpha compositing of the spherical-Gaussian volume
//! in front of the sky dome.
//!
//! For a query point x and direction l, K equi-spaced samples are taken at
//! the midpoints of equal segments between the grid entry and exit points:
//!
//!   t_k = t0 + (k + 0.5) * (t1 - t0) / K,      p_k = x + l * t_k
//!
//! and composited front to back with per-sample weight w_k = tau_{k-1}
//! alpha_k and lobe value G(-l; xi_k) = c e^(-(1 + l.mu)/sigma^2); the sky
//! term enters with the final transmittance tau_K. Accumulation is strictly
//! front to back and per channel as sum += w * g so independent
//! implementations of the same contract reproduce it bit for bit.

use crate::image::{Image, RgbImage};
use crate::math::{Rgb, Vec3};
use crate::sky::SkyDome;
use crate::volume::VsgGrid;
use crate::geometry::equirect_px_to_dir;
use rayon::prelude::*;

pub const DEFAULT_SAMPLES_PER_RAY: usize = 128;

/// Sky dome + lighting volume answering L(x, l) queries.
#[derive(Clone, Debug)]
pub struct HybridLightField {
    pub sky: SkyDome,
    pub grid: VsgGrid,
    pub samples_per_ray: usize,
    vacuum: bool,
}

impl HybridLightField {
    pub fn new(sky: SkyDome, grid: VsgGrid, samples_per_ray: usize) -> Self {
        let vacuum = grid.is_vacuum();
        HybridLightField { sky, grid, samples_per_ray: samples_per_ray.max(1), vacuum }
    }

    /// Sky-only field with a transparent 1x1x1 volume.
    pub fn sky_only(sky: SkyDome) -> Self {
        let grid = VsgGrid::empty((1, 1, 1), crate::volume::LogProjection::default())
            .expect("valid default grid");
        HybridLightField::new(sky, grid, DEFAULT_SAMPLES_PER_RAY)
    }

    /// Re-derive cached flags after direct voxel edits.
    pub fn refresh(&mut self) {
        self.vacuum = self.grid.is_vacuum();
    }

    pub fn is_vacuum(&self) -> bool {
        self.vacuum
    }

    /// HDR radiance arriving at `x` from direction `l` (front-to-back alpha
    /// compositing of voxel lobes in front of the sky).
    pub fn radiance(&self, x: Vec3, l: Vec3) -> Rgb {
        let env = self.sky.radiance(l);
        if self.vacuum {
            return env;
        }
        let (bb_min, bb_max) = self.grid.mapping.world_box();
        let Some((t0, t1)) = ray_box_span(bb_min, bb_max, x, l) else {
            return env;
        };
        let k_count = self.samples_per_ray;
        let dt = (t1 - t0) / k_count as f64;
        let mut sum = Rgb::BLACK;
        let mut tau = 1.0f64;
        for k in 0..k_count {
            let t = t0 + (k as f64 + 0.5) * dt;
            let p = x + l * t;
            if let Some(v) = self.grid.voxel_at(p) {
                if v.alpha > 0.0 {
                    let g = v.lobe(-l);
                    let w = tau * v.alpha;
                    sum.r += w * g.r;
                    sum.g += w * g.g;
                    sum.b += w * g.b;
                    tau *= 1.0 - v.alpha;
                }
            }
        }
        sum.r += tau * env.r;
        sum.g += tau * env.g;
        sum.b += tau * env.b;
        sum
    }

    /// Final transmittance tau_K of the volume along the ray.
    pub fn transmittance(&self, x: Vec3, l: Vec3) -> f64 {
        if self.vacuum {
            return 1.0;
        }
        let (bb_min, bb_max) = self.grid.mapping.world_box();
        let Some((t0, t1)) = ray_box_span(bb_min, bb_max, x, l) else {
            return 1.0;
        };
        let k_count = self.samples_per_ray;
        let dt = (t1 - t0) / k_count as f64;
        let mut tau = 1.0f64;
        for k in 0..k_count {
            let t = t0 + (k as f64 + 0.5) * dt;
            let p = x + l * t;
            if let Some(v) = self.grid.voxel_at(p) {
                tau *= 1.0 - v.alpha;
            }
        }
        tau
    }

    /// Bake the light field at `x` into an equirect HDR environment map.
    pub fn bake_envmap(&self, x: Vec3, w: usize, h: usize) -> RgbImage {
        let rows: Vec<Vec<Rgb>> = (0..h)
            .into_par_iter()
            .map(|y| {
                (0..w)
                    .map(|px| {
                        let dir = equirect_px_to_dir(px as f64 + 0.5, y as f64 + 0.5, w, h);
                        self.radiance(x, dir)
                    })
                    .collect()
            })
            .collect();
        Image::from_vec(w, h, rows.concat()).expect("sized by construction")
    }
}

/// Intersection of a ray (t >= 0) with an axis-aligned box, as a
/// `(t_enter, t_exit)` span; `t_enter` is clamped to 0 for rays starting
/// inside. None when the ray misses the box.
pub fn ray_box_span(bb_min: Vec3, bb_max: Vec3, origin: Vec3, dir: Vec3) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for axis in 0..3 {
        let d = dir[axis];
        let o = origin[axis];
        if d == 0.0 {
            if o < bb_min[axis] || o > bb_max[axis] {
                return None;
            }
        } else {
            let ta = (bb_min[axis] - o) / d;
            let tb = (bb_max[axis] - o) / d;
            let (near, far) = if ta <= tb { (ta, tb) } else { (tb, ta) };
            if near > t0 {
                t0 = near;
            }
            if far < t1 {
                t1 = far;
            }
            if t0 >= t1 {
                return None;
            }
        }
    }
    Some((t0, t1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sky::SkyDome;
    use crate::volume::{LogProjection, VsgGrid, VsgVoxel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mapping() -> LogProjection {
        LogProjection {
            half_extent_xy: 10.0,
            z_range: (-10.0, 10.0),
            curvature: 3.0,
            origin: Vec3::ZERO,
        }
    }

    fn random_grid(rng: &mut ChaCha8Rng, dims: (usize, usize, usize)) -> VsgGrid {
        let mut grid = VsgGrid::empty(dims, mapping()).unwrap();
        for v in &mut grid.voxels {
            *v = VsgVoxel {
                c: Rgb::new(rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)),
                mu: Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
                .normalized_or(Vec3::Z),
                sigma: rng.gen_range(0.1..2.0),
                alpha: rng.gen_range(0.0..1.0),
            };
        }
        grid
    }

    #[test]
    fn vacuum_grid_returns_sky_exactly() {
        let sky = SkyDome::uniform(Rgb::new(0.4, 0.5, 0.6));
        let lf = HybridLightField::new(sky, VsgGrid::empty((2, 2, 2), mapping()).unwrap(), 16);
        let l = Vec3::new(0.3, 0.2, 0.93).normalized();
        assert_eq!(lf.radiance(Vec3::ZERO, l), lf.sky.radiance(l));
        assert_eq!(lf.transmittance(Vec3::ZERO, l), 1.0);
    }

    #[test]
    fn opaque_aligned_lobe_fully_occludes_sky() {
        let sky = SkyDome::uniform(Rgb::new(9.0, 9.0, 9.0));
        let l = Vec3::new(0.0, 0.6, 0.8).normalized();
        let mut grid = VsgGrid::empty((1, 1, 1), mapping()).unwrap();
        grid.voxels[0] = VsgVoxel {
            c: Rgb::new(2.0, 2.0, 2.0),
            mu: -l,
            sigma: 0.5,
            alpha: 1.0,
        };
        let lf = HybridLightField::new(sky, grid, 4);
        // (-l).mu = 1 so the lobe exponent is 0; the sky is fully blocked.
        let v = lf.radiance(Vec3::ZERO, l);
        assert!((v.r - 2.0).abs() < 1e-12);
        assert!((v.g - 2.0).abs() < 1e-12);
        assert!((v.b - 2.0).abs() < 1e-12);
        assert_eq!(lf.transmittance(Vec3::ZERO, l), 0.0);
    }

    #[test]
    fn transmittance_two_half_opacity_samples() {
        let sky = SkyDome::uniform(Rgb::BLACK);
        let mut grid = VsgGrid::empty((1, 1, 1), mapping()).unwrap();
        grid.voxels[0].alpha = 0.5;
        let lf = HybridLightField::new(sky, grid, 2);
        let tau = lf.transmittance(Vec3::ZERO, Vec3::Z);
        assert!((tau - 0.25).abs() < 1e-15);
    }

    #[test]
    fn radiance_nonneg_finite_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sky = SkyDome::uniform(Rgb::new(0.2, 0.3, 0.1));
        let lf = HybridLightField::new(sky, random_grid(&mut rng, (3, 3, 3)), 32);
        for _ in 0..500 {
            let l = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalized_or(Vec3::Z);
            let x = Vec3::new(rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0));
            let v = lf.radiance(x, l);
            assert!(v.is_finite() && v.is_non_negative(), "{v:?}");
            let tau = lf.transmittance(x, l);
            assert!((0.0..=1.0).contains(&tau));
        }
    }

    #[test]
    fn raising_alpha_never_raises_transmittance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sky = SkyDome::uniform(Rgb::BLACK);
        let grid = random_grid(&mut rng, (2, 2, 2));
        let l = Vec3::new(0.1, 0.2, 0.97).normalized();
        let x = Vec3::new(0.3, -0.2, -3.0);
        for i in 0..8 {
            let base = HybridLightField::new(sky.clone(), grid.clone(), 16);
            let tau0 = base.transmittance(x, l);
            let mut raised = grid.clone();
            raised.voxels[i].alpha = (raised.voxels[i].alpha + 0.3).min(1.0);
            let lf1 = HybridLightField::new(sky.clone(), raised, 16);
            let tau1 = lf1.transmittance(x, l);
            assert!(tau1 <= tau0 + 1e-15);
        }
    }

    #[test]
    fn bake_of_vacuum_matches_sky_resampling() {
        let mut bg = Image::filled(8, 4, Rgb::BLACK);
        for (i, p) in bg.pixels_mut().iter_mut().enumerate() {
            *p = Rgb::gray(i as f64 * 0.1);
        }
        let sky = SkyDome::new(Vec3::Z, Rgb::new(5.0, 5.0, 5.0), bg, 100.0).unwrap();
        let lf = HybridLightField::sky_only(sky);
        let baked = lf.bake_envmap(Vec3::new(1.0, 2.0, 0.5), 16, 8);
        for (x, y, &v) in baked.enumerate() {
            let dir = equirect_px_to_dir(x as f64 + 0.5, y as f64 + 0.5, 16, 8);
            assert_eq!(v, lf.sky.radiance(dir));
        }
    }

    #[test]
    fn bake_sees_occluder_from_one_side_only() {
        let sky = SkyDome::uniform(Rgb::WHITE);
        let mut grid = VsgGrid::empty((8, 8, 8), mapping()).unwrap();
        // Opaque slab of voxels at normalized x in [0.25, 0.5).
        for iz in 0..8 {
            for iy in 0..8 {
                for ix in 5..6 {
                    let idx = grid.flat_index(ix, iy, iz);
                    grid.voxels[idx].alpha = 1.0;
                }
            }
        }
        let lf = HybridLightField::new(sky, grid, 64);
        let left = lf.bake_envmap(Vec3::new(-3.0, 0.0, 0.0), 16, 8);
        let right = lf.bake_envmap(Vec3::new(8.0, 0.0, 0.0), 16, 8);
        // Looking along +x: the left probe sees the wall, the right sees sky.
        let (px, py) = crate::geometry::equirect_dir_to_px(Vec3::X, 16, 8);
        let lv = *left.get(px as usize, py as usize);
        let rv = *right.get(px as usize, py as usize);
        assert!(lv.r < 0.5, "wall should darken the left probe, got {lv:?}");
        assert!((rv.r - 1.0).abs() < 1e-9, "right probe should see sky, got {rv:?}");
    }

    #[test]
    fn span_misses_box() {
        let (lo, hi) = (Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0));
        assert!(ray_box_span(lo, hi, Vec3::new(5.0, 0.0, 0.0), Vec3::X).is_none());
        assert!(ray_box_span(lo, hi, Vec3::new(5.0, 0.0, 0.0), -Vec3::X).is_some());
        assert!(ray_box_span(lo, hi, Vec3::new(0.0, 5.0, 0.0), Vec3::Z).is_none());
    }

    #[test]
    fn span_clamps_to_origin_inside() {
        let (lo, hi) = (Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0));
        let (t0, t1) = ray_box_span(lo, hi, Vec3::new(0.5, 0.0, 0.0), Vec3::X).unwrap();
        assert_eq!(t0, 0.0);
        assert!((t1 - 0.5).abs() < 1e-12);
    }
}
