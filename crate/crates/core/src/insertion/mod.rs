//! Differentiable object insertion: foreground Monte-Carlo shading, ratio
//! shadow maps, and composition.
//!
//! The pass is split into a lighting-independent [`InsertionRecord`] (primary
//! hits, sampled ray sets, mesh occlusion flags) and a lighting-dependent
//! [`forward`]. Replaying the same record under perturbed lighting reuses the
//! exact ray set, which is what makes finite-difference checks and the
//! fitting loop well-conditioned (common random numbers).

mod composite;
mod fibonacci;
mod gbuffer;
mod rays;

pub use composite::{
    composite, shade_background_channel, shade_background_channel_ds, upsample_bilinear,
    RatioShadowMap,
};
pub use fibonacci::fibonacci_hemisphere;
pub use gbuffer::{rasterize_gbuffer, GBuffer};
pub use rays::{
    per_pixel_rays, shared_ray_weight, shared_sphere_dirs, stream_rng, FgRay, RayStrategy,
};

use crate::brdf::MaterialParams;
use crate::error::{Error, Result};
use crate::geometry::{Bvh, PinholeCamera, Ray, TriMesh};
use crate::image::{Image, RgbImage, ScalarImage};
use crate::lightfield::HybridLightField;
use crate::math::{Rgb, Vec3};
use crate::sky::ToneMapParams;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Shadow rays start this far above the scene point to avoid hitting the
/// ground the point lies on.
pub const SHADOW_ORIGIN_LIFT: f64 = 1e-3;

/// Foreground occlusion rays start this far along the shading normal.
pub const FG_ORIGIN_LIFT: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InsertionConfig {
    pub strategy: RayStrategy,
    /// Fibonacci directions per shadow pixel.
    pub shadow_rays: usize,
    pub shadow_width: usize,
    pub shadow_height: usize,
    /// Radiance substituted for rays occluded by the inserted mesh.
    pub ambient: f64,
    /// Keep per-channel shadow ratios instead of the scalar average.
    pub rgb_shadow: bool,
    /// Replace foreground rays that re-hit the mesh by the ambient value.
    pub self_occlusion: bool,
    pub seed: u64,
}

impl Default for InsertionConfig {
    fn default() -> Self {
        InsertionConfig {
            strategy: RayStrategy::SharedSphere { rays: 5000 },
            shadow_rays: 450,
            shadow_width: 160,
            shadow_height: 90,
            ambient: 0.1,
            rgb_shadow: false,
            self_occlusion: true,
            seed: 0,
        }
    }
}

/// Scene-side inputs of an insertion: camera, background photo, its depth,
/// and the posed mesh.
pub struct InsertionScene {
    pub camera: PinholeCamera,
    /// LDR sRGB-encoded background in [0,1].
    pub background: RgbImage,
    /// Camera z-depth in meters; non-finite or <= 0 marks invalid pixels.
    pub scene_depth: ScalarImage,
    pub mesh: TriMesh,
    pub bvh: Bvh,
    pub tone: ToneMapParams,
}

impl InsertionScene {
    pub fn new(
        camera: PinholeCamera,
        background: RgbImage,
        scene_depth: ScalarImage,
        mesh: TriMesh,
    ) -> Result<InsertionScene> {
        if background.width() != camera.width || background.height() != camera.height {
            return Err(Error::SizeMismatch {
                expected_w: camera.width,
                expected_h: camera.height,
                got_w: background.width(),
                got_h: background.height(),
            });
        }
        if !scene_depth.same_size(&background) {
            return Err(Error::SizeMismatch {
                expected_w: background.width(),
                expected_h: background.height(),
                got_w: scene_depth.width(),
                got_h: scene_depth.height(),
            });
        }
        let bvh = Bvh::build(&mesh);
        Ok(InsertionScene {
            camera,
            background,
            scene_depth,
            mesh,
            bvh,
            tone: ToneMapParams::default(),
        })
    }
}

/// Fixed-size bit set for per-ray occlusion flags.
#[derive(Clone, Debug, Default)]
pub struct BitSet {
    words: Vec<u64>,
}

impl BitSet {
    pub fn new(bits: usize) -> BitSet {
        BitSet { words: vec![0; bits.div_ceil(64)] }
    }

    pub fn empty() -> BitSet {
        BitSet { words: Vec::new() }
    }

    pub fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, i: usize) -> bool {
        self.words
            .get(i / 64)
            .map_or(false, |w| w & (1 << (i % 64)) != 0)
    }

    pub fn any(&self) -> bool {
        self.words.iter().any(|&w| w != 0)
    }
}

/// One foreground pixel of the record.
#[derive(Clone, Debug)]
pub struct FgPixel {
    pub x: usize,
    pub y: usize,
    pub position: Vec3,
    pub normal: Vec3,
    /// Unit direction toward the camera.
    pub view: Vec3,
    pub material: MaterialParams,
    /// RNG index for the per-pixel ray stream.
    pub pixel_index: u64,
    /// Self-occlusion flags per ray slot; empty when disabled.
    pub blocked: BitSet,
}

/// One shadow pixel with at least one occluded ray.
#[derive(Clone, Debug)]
pub struct ShadowPixel {
    pub point: Vec3,
    pub occluded: BitSet,
}

/// Lighting-independent sampling state of an insertion pass.
pub struct InsertionRecord {
    pub cfg: InsertionConfig,
    pub gbuffer: GBuffer,
    pub fg_pixels: Vec<FgPixel>,
    /// Shared uniform-sphere directions (SharedSphere strategy only).
    pub shared_dirs: Vec<Vec3>,
    /// Radiance query point of the shared strategy (mesh bounds center).
    pub shared_center: Vec3,
    /// Fibonacci lattice over the up hemisphere, shared by all shadow pixels.
    pub shadow_dirs: Vec<Vec3>,
    /// (n . l) weights of the lattice with n = world up.
    pub shadow_weights: Vec<f64>,
    /// Row-major at shadow resolution; None where the depth is invalid or no
    /// ray is occluded (S = 1 there, with zero lighting gradient).
    pub shadow_pixels: Vec<Option<ShadowPixel>>,
}

/// Rendered buffers of one insertion pass.
pub struct InsertionOutputs {
    pub foreground_hdr: RgbImage,
    pub shadow: RatioShadowMap,
    pub composite: RgbImage,
}

/// Trace primary rays, sample all ray sets, and cache mesh occlusion.
pub fn build_record(scene: &InsertionScene, cfg: &InsertionConfig) -> InsertionRecord {
    let gbuffer = rasterize_gbuffer(&scene.camera, &scene.mesh, &scene.bvh, Some(&scene.scene_depth));
    let mask_pixels = gbuffer.mask_pixels();
    let width = scene.camera.width;

    let shared_dirs = match cfg.strategy {
        RayStrategy::SharedSphere { rays } => shared_sphere_dirs(rays, cfg.seed),
        _ => Vec::new(),
    };
    let (lo, hi) = scene.mesh.aabb();
    let shared_center = (lo + hi) * 0.5;

    let fg_pixels: Vec<FgPixel> = mask_pixels
        .par_iter()
        .map(|&(x, y)| {
            let position = *gbuffer.position.get(x, y);
            let normal = *gbuffer.normal.get(x, y);
            let view = (scene.camera.origin() - position).normalized_or(normal);
            let material = scene.mesh.materials[*gbuffer.material.get(x, y) as usize].clamped();
            let pixel_index = (y * width + x) as u64;
            let origin = position + normal * FG_ORIGIN_LIFT;
            let blocked = if !cfg.self_occlusion {
                BitSet::empty()
            } else if cfg.strategy.is_shared() {
                let mut bits = BitSet::new(shared_dirs.len());
                for (k, &dir) in shared_dirs.iter().enumerate() {
                    if normal.dot(dir) > 0.0
                        && scene.bvh.occluded(&scene.mesh, &Ray::new(origin, dir), f64::INFINITY)
                    {
                        bits.set(k);
                    }
                }
                bits
            } else {
                let rays = per_pixel_rays(cfg.strategy, &material, normal, view, cfg.seed, pixel_index);
                let mut bits = BitSet::new(rays.len());
                for (k, ray) in rays.iter().enumerate() {
                    if ray.weight != Rgb::BLACK
                        && scene.bvh.occluded(&scene.mesh, &Ray::new(origin, ray.dir), f64::INFINITY)
                    {
                        bits.set(k);
                    }
                }
                bits
            };
            FgPixel { x, y, position, normal, view, material, pixel_index, blocked }
        })
        .collect();

    let shadow_dirs = fibonacci_hemisphere(cfg.shadow_rays, Vec3::Z);
    let shadow_weights: Vec<f64> = shadow_dirs.iter().map(|d| d.z).collect();

    let (sw, sh) = (cfg.shadow_width, cfg.shadow_height);
    let (img_w, img_h) = (scene.camera.width, scene.camera.height);
    let shadow_pixels: Vec<Option<ShadowPixel>> = (0..sw * sh)
        .into_par_iter()
        .map(|i| {
            let sx = i % sw;
            let sy = i / sw;
            // Nearest full-resolution pixel under this shadow texel.
            let ix = (((sx as f64 + 0.5) * img_w as f64 / sw as f64) as usize).min(img_w - 1);
            let iy = (((sy as f64 + 0.5) * img_h as f64 / sh as f64) as usize).min(img_h - 1);
            let d = *scene.scene_depth.get(ix, iy);
            if !crate::geometry::depth_valid(d) {
                return None;
            }
            let point = scene.camera.point_at_depth(ix as f64 + 0.5, iy as f64 + 0.5, d);
            let origin = point + Vec3::Z * SHADOW_ORIGIN_LIFT;
            let mut occluded = BitSet::new(shadow_dirs.len());
            let mut any = false;
            for (k, &dir) in shadow_dirs.iter().enumerate() {
                if scene.bvh.occluded(&scene.mesh, &Ray::new(origin, dir), f64::INFINITY) {
                    occluded.set(k);
                    any = true;
                }
            }
            any.then_some(ShadowPixel { point, occluded })
        })
        .collect();

    InsertionRecord {
        cfg: *cfg,
        gbuffer,
        fg_pixels,
        shared_dirs,
        shared_center,
        shadow_dirs,
        shadow_weights,
        shadow_pixels,
    }
}

/// Monte-Carlo estimate of the reflection integral per mask pixel; zero
/// outside the mask.
pub fn shade_foreground(record: &InsertionRecord, lf: &HybridLightField) -> RgbImage {
    let cfg = &record.cfg;
    let ambient = Rgb::gray(cfg.ambient);
    let values: Vec<Rgb> = if let RayStrategy::SharedSphere { rays } = cfg.strategy {
        let cache: Vec<Rgb> = record
            .shared_dirs
            .par_iter()
            .map(|&d| lf.radiance(record.shared_center, d))
            .collect();
        record
            .fg_pixels
            .par_iter()
            .map(|px| {
                let mut acc = Rgb::BLACK;
                for (k, &dir) in record.shared_dirs.iter().enumerate() {
                    let w = shared_ray_weight(&px.material, px.normal, px.view, dir, rays);
                    if w == Rgb::BLACK {
                        continue;
                    }
                    let radiance = if px.blocked.get(k) { ambient } else { cache[k] };
                    acc += w * radiance;
                }
                acc
            })
            .collect()
    } else {
        record
            .fg_pixels
            .par_iter()
            .map(|px| {
                let rays =
                    per_pixel_rays(cfg.strategy, &px.material, px.normal, px.view, cfg.seed, px.pixel_index);
                let mut acc = Rgb::BLACK;
                for (k, ray) in rays.iter().enumerate() {
                    if ray.weight == Rgb::BLACK {
                        continue;
                    }
                    let radiance = if px.blocked.get(k) {
                        ambient
                    } else {
                        lf.radiance(px.position, ray.dir)
                    };
                    acc += ray.weight * radiance;
                }
                acc
            })
            .collect()
    };

    let mut out = Image::filled(record.gbuffer.mask.width(), record.gbuffer.mask.height(), Rgb::BLACK);
    for (px, v) in record.fg_pixels.iter().zip(values) {
        *out.get_mut(px.x, px.y) = v;
    }
    out
}

/// Per-channel shadow pixel ratio: numerator replaces occluded radiance by
/// the ambient value, denominator keeps the original lighting.
fn shadow_pixel_ratio(
    sp: &ShadowPixel,
    dirs: &[Vec3],
    weights: &[f64],
    ambient: Rgb,
    lf: &HybridLightField,
) -> Rgb {
    let mut num = Rgb::BLACK;
    let mut den = Rgb::BLACK;
    for (k, (&dir, &w)) in dirs.iter().zip(weights).enumerate() {
        let radiance = lf.radiance(sp.point, dir);
        den += radiance * w;
        if sp.occluded.get(k) {
            num += ambient * w;
        } else {
            num += radiance * w;
        }
    }
    let ratio = |n: f64, d: f64| if d > 0.0 { n / d } else { 1.0 };
    Rgb::new(ratio(num.r, den.r), ratio(num.g, den.g), ratio(num.b, den.b))
}

/// Ratio shadow map over the scene: per-pixel before/after radiance ratios
/// under the Lambertian up-facing ground assumption; pixels without
/// occlusion stay exactly 1.
pub fn shadow_ratio(record: &InsertionRecord, lf: &HybridLightField) -> RatioShadowMap {
    let cfg = &record.cfg;
    let ambient = Rgb::gray(cfg.ambient);
    let values: Vec<Rgb> = record
        .shadow_pixels
        .par_iter()
        .map(|entry| match entry {
            None => Rgb::WHITE,
            Some(sp) => {
                let per_channel =
                    shadow_pixel_ratio(sp, &record.shadow_dirs, &record.shadow_weights, ambient, lf);
                if cfg.rgb_shadow {
                    per_channel
                } else {
                    Rgb::gray(per_channel.mean())
                }
            }
        })
        .collect();
    RatioShadowMap {
        values: Image::from_vec(cfg.shadow_width, cfg.shadow_height, values)
            .expect("sized by construction"),
        scalar: !cfg.rgb_shadow,
    }
}

/// Full forward pass: foreground, shadow map, composite.
pub fn forward(
    record: &InsertionRecord,
    scene: &InsertionScene,
    lf: &HybridLightField,
) -> Result<InsertionOutputs> {
    let foreground_hdr = shade_foreground(record, lf);
    let shadow = shadow_ratio(record, lf);
    let composite = composite(
        &scene.background,
        &foreground_hdr,
        &record.gbuffer.mask,
        &shadow,
        &scene.tone,
    )?;
    Ok(InsertionOutputs { foreground_hdr, shadow, composite })
}

/// Build the record and run the forward pass in one call.
pub fn insert(
    scene: &InsertionScene,
    lf: &HybridLightField,
    cfg: &InsertionConfig,
) -> Result<(InsertionRecord, InsertionOutputs)> {
    let record = build_record(scene, cfg);
    let outputs = forward(&record, scene, lf)?;
    Ok((record, outputs))
}
