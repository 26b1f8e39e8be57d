//! Finite-difference verification of the hand-written adjoints on small
//! randomized scenes.

use super::record::{insertion_backward, OutputGrads};
use crate::error::Result;
use crate::geometry::mesh::quad;
use crate::geometry::{PinholeCamera, TriMesh};
use crate::image::{Image, RgbImage};
use crate::insertion::{
    build_record, forward, stream_rng, InsertionConfig, InsertionRecord, InsertionScene,
    RayStrategy,
};
use crate::lightfield::HybridLightField;
use crate::math::{orthonormal_basis, Rgb, Vec3};
use crate::sky::SkyDome;
use crate::volume::{LogProjection, VsgGrid, VsgVoxel};
use crate::brdf::MaterialParams;
use rand::Rng;

/// A randomized scene small enough for exhaustive finite differences.
pub struct TinyScene {
    pub scene: InsertionScene,
    pub record: InsertionRecord,
    pub lf: HybridLightField,
    /// Per-pixel gradient of the probe loss sum(w * composite).
    pub weights: RgbImage,
}

/// Deterministic random tiny scene: 8x8 image, 2x2x2 grid, 16 rays, with a
/// flat plate and a ground plane. Radiance levels keep composite values away
/// from the tonemap knee and zero, where finite differences degrade.
pub fn tiny_scene(seed: u64) -> TinyScene {
    let mut rng = stream_rng(seed, 900, 0);
    let cam = PinholeCamera::new(
        8.0,
        8.0,
        4.0,
        4.0,
        8,
        8,
        PinholeCamera::street_pose(1.5),
    )
    .unwrap();

    // Ground plane z = 0 depth where the pixel ray points down.
    let depth = Image::from_fn(8, 8, |x, y| {
        let ray = cam.pixel_ray(x as f64 + 0.5, y as f64 + 0.5).unwrap();
        if ray.direction.z < -1e-4 {
            cam.z_depth(ray.at(-cam.origin().z / ray.direction.z))
        } else {
            f64::NAN
        }
    });
    let background = Image::from_fn(8, 8, |_, _| {
        Rgb::new(
            rng.gen_range(0.25..0.8),
            rng.gen_range(0.25..0.8),
            rng.gen_range(0.25..0.8),
        )
    });

    let material = MaterialParams {
        base_color: Rgb::new(
            rng.gen_range(0.35..0.8),
            rng.gen_range(0.35..0.8),
            rng.gen_range(0.35..0.8),
        ),
        metallic: rng.gen_range(0.0..0.5),
        roughness: rng.gen_range(0.4..1.0),
        specular: rng.gen_range(0.0..1.0),
    };
    // Plate standing on the ground in front of the camera.
    let mesh = TriMesh::with_material(
        quad(Vec3::new(0.0, 4.0, 0.9), Vec3::X * 0.9, Vec3::Z * 0.9),
        material,
    )
    .unwrap();

    let mapping = LogProjection {
        half_extent_xy: 8.0,
        z_range: (-2.0, 6.0),
        curvature: 3.0,
        origin: cam.origin(),
    };
    let mut grid = VsgGrid::empty((2, 2, 2), mapping).unwrap();
    for v in &mut grid.voxels {
        *v = VsgVoxel {
            c: Rgb::new(
                rng.gen_range(0.05..0.5),
                rng.gen_range(0.05..0.5),
                rng.gen_range(0.05..0.5),
            ),
            mu: Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalized_or(Vec3::Z),
            sigma: rng.gen_range(0.4..1.5),
            alpha: rng.gen_range(0.15..0.85),
        };
    }
    let sky = SkyDome::new(
        {
            let z: f64 = rng.gen_range(0.2..0.95);
            let az: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).sqrt();
            Vec3::new(r * az.cos(), r * az.sin(), z)
        },
        Rgb::new(
            rng.gen_range(0.3..0.8),
            rng.gen_range(0.3..0.8),
            rng.gen_range(0.3..0.8),
        ),
        Image::from_fn(8, 4, |_, _| {
            Rgb::new(
                rng.gen_range(0.25..0.55),
                rng.gen_range(0.25..0.55),
                rng.gen_range(0.25..0.55),
            )
        }),
        3.0, // broad lobe so direction gradients are well-scaled
    )
    .unwrap();
    let lf = HybridLightField::new(sky, grid, 8);

    let strategy = match seed % 3 {
        0 => RayStrategy::UniformHemisphere { rays: 16 },
        1 => RayStrategy::SharedSphere { rays: 16 },
        _ => RayStrategy::ImportanceSplit { diffuse: 12, specular: 4 },
    };
    let cfg = InsertionConfig {
        strategy,
        shadow_rays: 16,
        shadow_width: 4,
        shadow_height: 4,
        seed,
        ..Default::default()
    };
    let scene = InsertionScene::new(cam, background, depth, mesh).unwrap();
    let record = build_record(&scene, &cfg);

    let weights = Image::from_fn(8, 8, |_, _| {
        Rgb::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
    });
    TinyScene { scene, record, lf, weights }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub checked: usize,
    pub skipped: Vec<String>,
    pub tolerance: f64,
    pub fd_step: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Absolute floor below which an adjoint/finite-difference pair counts as
/// matching regardless of relative error.
pub const ABS_FLOOR: f64 = 1e-10;

fn rel_err(fd: f64, an: f64) -> f64 {
    let diff = (fd - an).abs();
    if diff <= ABS_FLOOR {
        0.0
    } else {
        diff / fd.abs().max(an.abs())
    }
}

/// Compare every lighting-parameter adjoint of the probe loss against
/// central finite differences (common random numbers: the record fixes the
/// ray set across all evaluations).
pub fn grad_check(ts: &TinyScene, tolerance: f64, fd_step: f64, bands: usize) -> Result<GradCheckReport> {
    let probe = |lf: &HybridLightField| -> Result<f64> {
        let out = forward(&ts.record, &ts.scene, lf)?;
        let mut acc = 0.0;
        for (p, w) in out.composite.pixels().iter().zip(ts.weights.pixels()) {
            acc += p.r * w.r + p.g * w.g + p.b * w.b;
        }
        Ok(acc)
    };

    let grads = OutputGrads {
        d_composite: Some(&ts.weights),
        d_foreground: None,
        d_shadow: None,
    };
    let adj = insertion_backward(&ts.record, &ts.scene, &ts.lf, &grads, bands);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        checked: 0,
        skipped: Vec::new(),
        tolerance,
        fd_step,
    };
    let h = fd_step;

    let consider = |name: String, fd: f64, an: f64, report: &mut GradCheckReport| {
        report.checked += 1;
        let e = rel_err(fd, an);
        if e > report.max_rel_err {
            report.max_rel_err = e;
            report.worst_param = format!("{name} (fd {fd:.6e}, adjoint {an:.6e})");
        }
    };

    // Voxel channels.
    for i in 0..ts.lf.grid.voxel_count() {
        for ch in 0..8 {
            let name = format!("voxel[{i}].{}", voxel_channel_name(ch));
            if ch == 7 {
                let a = ts.lf.grid.voxels[i].alpha;
                if a - h < 0.0 || a + h > 1.0 {
                    report.skipped.push(format!("{name}: alpha at constraint boundary"));
                    continue;
                }
            }
            let mut plus = ts.lf.clone();
            let mut minus = ts.lf.clone();
            nudge_voxel(&mut plus.grid, i, ch, h);
            nudge_voxel(&mut minus.grid, i, ch, -h);
            plus.refresh();
            minus.refresh();
            let fd = (probe(&plus)? - probe(&minus)?) / (2.0 * h);
            if !fd.is_finite() {
                report.skipped.push(format!("{name}: non-finite finite difference"));
                continue;
            }
            let an = voxel_adjoint_channel(&adj.voxels[i], ch);
            consider(name, fd, an, &mut report);
        }
    }

    // Peak intensity.
    for ch in 0..3 {
        let mut plus = ts.lf.clone();
        let mut minus = ts.lf.clone();
        *plus.sky.peak_intensity.channel_mut(ch) += h;
        *minus.sky.peak_intensity.channel_mut(ch) -= h;
        let fd = (probe(&plus)? - probe(&minus)?) / (2.0 * h);
        consider(
            format!("peak_intensity.{ch}"),
            fd,
            adj.peak_intensity.channel(ch),
            &mut report,
        );
    }

    // Peak direction: finite differences along the two tangent basis
    // vectors, compared against the tangent-projected adjoint.
    let (t0, t1) = orthonormal_basis(ts.lf.sky.peak_dir);
    for (which, t) in [(0, t0), (1, t1)] {
        let mut plus = ts.lf.clone();
        let mut minus = ts.lf.clone();
        plus.sky.peak_dir += t * h;
        minus.sky.peak_dir += t * (-h);
        let fd = (probe(&plus)? - probe(&minus)?) / (2.0 * h);
        consider(format!("peak_dir.tangent{which}"), fd, adj.peak_dir.dot(t), &mut report);
    }

    // Background texels.
    for y in 0..ts.lf.sky.background.height() {
        for x in 0..ts.lf.sky.background.width() {
            for ch in 0..3 {
                let mut plus = ts.lf.clone();
                let mut minus = ts.lf.clone();
                *plus.sky.background.get_mut(x, y).channel_mut(ch) += h;
                *minus.sky.background.get_mut(x, y).channel_mut(ch) -= h;
                let fd = (probe(&plus)? - probe(&minus)?) / (2.0 * h);
                consider(
                    format!("background[{x},{y}].{ch}"),
                    fd,
                    adj.background.get(x, y).channel(ch),
                    &mut report,
                );
            }
        }
    }

    Ok(report)
}

fn voxel_channel_name(ch: usize) -> &'static str {
    ["c.r", "c.g", "c.b", "mu.x", "mu.y", "mu.z", "sigma", "alpha"][ch]
}

fn nudge_voxel(grid: &mut VsgGrid, i: usize, ch: usize, delta: f64) {
    let v = &mut grid.voxels[i];
    match ch {
        0 => v.c.r += delta,
        1 => v.c.g += delta,
        2 => v.c.b += delta,
        3 => v.mu.x += delta,
        4 => v.mu.y += delta,
        5 => v.mu.z += delta,
        6 => v.sigma += delta,
        _ => v.alpha += delta,
    }
}

fn voxel_adjoint_channel(v: &super::VoxelAdjoint, ch: usize) -> f64 {
    match ch {
        0 => v.c.r,
        1 => v.c.g,
        2 => v.c.b,
        3 => v.mu.x,
        4 => v.mu.y,
        5 => v.mu.z,
        6 => v.sigma,
        _ => v.alpha,
    }
}
