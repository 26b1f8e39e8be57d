//! Subcommand implementations.

use crate::ProbeMaterial;
use hlf_core::brdf::MaterialParams;
use hlf_core::diffopt::{
    self, grad_check, tiny_scene, FitConfig, InsertionObservation, Observation,
};
use hlf_core::geometry::mesh::icosphere;
use hlf_core::geometry::TriMesh;
use hlf_core::image::Image;
use hlf_core::insertion::{build_record, forward, stream_rng, InsertionScene};
use hlf_core::io::{self, CameraConfig};
use hlf_core::lightfield::HybridLightField;
use hlf_core::math::{Rgb, Vec3};
use hlf_core::sky::SkyDome;
use hlf_core::volume::{LogProjection, VsgGrid, VsgVoxel};
use hlf_core::{Error, Result};
use rand::Rng;
use serde::Deserialize;
use std::io::Write as _;
use std::path::{Path, PathBuf};

pub struct Ctx {
    pub seed: Option<u64>,
    pub quality: Option<io::Quality>,
    pub bands: usize,
}

impl Ctx {
    fn resolve_scene(&self, path: &Path) -> Result<io::ResolvedScene> {
        let mut resolved = io::resolve_scene(path)?;
        let mut render = resolved.config.render;
        if let Some(q) = self.quality {
            render.quality = q;
        }
        if let Some(seed) = self.seed {
            render.seed = seed;
        }
        resolved.insertion =
            render.insertion_config(resolved.scene.camera.width, resolved.scene.camera.height);
        Ok(resolved)
    }
}

fn parse_vec3(s: &str) -> Result<Vec3> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::invalid(format!("expected x,y,z, got {s:?}")));
    }
    let mut v = [0.0f64; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p
            .trim()
            .parse()
            .map_err(|e| Error::invalid(format!("bad coordinate {p:?}: {e}")))?;
    }
    Ok(Vec3::new(v[0], v[1], v[2]))
}

fn parse_res(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::invalid(format!("expected HxW, got {s:?}")))?;
    let h: usize = h.trim().parse().map_err(|e| Error::invalid(format!("bad rows {h:?}: {e}")))?;
    let w: usize = w.trim().parse().map_err(|e| Error::invalid(format!("bad cols {w:?}: {e}")))?;
    if h == 0 || w == 0 {
        return Err(Error::invalid("resolution must be positive"));
    }
    Ok((h, w))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_buffers(
    out: &Path,
    scene: &InsertionScene,
    outputs: &hlf_core::insertion::InsertionOutputs,
    record: &hlf_core::insertion::InsertionRecord,
) -> Result<()> {
    ensure_dir(out)?;
    io::write_png(&out.join("input.png"), &scene.background)?;
    io::write_hdr(&out.join("object.hdr"), &outputs.foreground_hdr)?;
    io::write_png_mask(&out.join("mask.png"), &record.gbuffer.mask)?;
    if outputs.shadow.scalar {
        io::write_pfm_scalar(
            &out.join("shadow_ratio.pfm"),
            &outputs.shadow.values.map(|v| v.r),
        )?;
    } else {
        io::write_pfm_rgb(&out.join("shadow_ratio.pfm"), &outputs.shadow.values)?;
    }
    io::write_png(&out.join("composite.png"), &outputs.composite)?;
    Ok(())
}

pub fn insert(ctx: &Ctx, scene_path: &Path, out: &Path) -> Result<()> {
    let resolved = ctx.resolve_scene(scene_path)?;
    println!(
        "insert: {}x{} image, {} triangles, strategy {:?}, shadow {}x{}",
        resolved.scene.camera.width,
        resolved.scene.camera.height,
        resolved.scene.mesh.triangle_count(),
        resolved.insertion.strategy,
        resolved.insertion.shadow_width,
        resolved.insertion.shadow_height,
    );
    let record = build_record(&resolved.scene, &resolved.insertion);
    println!(
        "insert: {} object pixels, {} shadowed shadow-map pixels",
        record.fg_pixels.len(),
        record.shadow_pixels.iter().flatten().count()
    );
    let outputs = forward(&record, &resolved.scene, &resolved.light_field)?;
    write_buffers(out, &resolved.scene, &outputs, &record)?;
    println!("insert: wrote composite.png, object.hdr, mask.png, shadow_ratio.pfm, input.png to {}", out.display());
    Ok(())
}

pub fn bake(_ctx: &Ctx, lighting: &Path, at: &str, res: &str, out: &Path) -> Result<()> {
    let at = parse_vec3(at)?;
    let (h, w) = parse_res(res)?;
    let lf = io::read_container(lighting, hlf_core::lightfield::DEFAULT_SAMPLES_PER_RAY)?;
    println!("bake: {}x{} map at {at:?}", h, w);
    let map = lf.bake_envmap(at, w, h);
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    io::write_hdr(out, &map)?;
    println!("bake: wrote {}", out.display());
    Ok(())
}

pub fn probe(
    ctx: &Ctx,
    scene_path: &Path,
    material: ProbeMaterial,
    at: &str,
    radius: f64,
    out: &Path,
) -> Result<()> {
    let at = parse_vec3(at)?;
    if !(radius > 0.0) {
        return Err(Error::invalid("probe radius must be positive"));
    }
    let resolved = ctx.resolve_scene(scene_path)?;
    let mat = match material {
        ProbeMaterial::Specular => MaterialParams {
            base_color: Rgb::WHITE,
            metallic: 1.0,
            roughness: 0.05,
            specular: 1.0,
        },
        ProbeMaterial::Diffuse => MaterialParams {
            base_color: Rgb::gray(0.7),
            metallic: 0.0,
            roughness: 1.0,
            specular: 0.0,
        },
    };
    let mesh = TriMesh::with_material(icosphere(at, radius, 3), mat)?;
    let scene = InsertionScene::new(
        resolved.scene.camera.clone(),
        resolved.scene.background.clone(),
        resolved.scene.scene_depth.clone(),
        mesh,
    )?;
    let record = build_record(&scene, &resolved.insertion);
    if record.fg_pixels.is_empty() {
        eprintln!("warning: probe sphere is not visible from the camera");
    }
    let outputs = forward(&record, &scene, &resolved.light_field)?;
    write_buffers(out, &scene, &outputs, &record)?;
    println!("probe: wrote buffers to {}", out.display());
    Ok(())
}

#[derive(Deserialize)]
struct ObsFile {
    #[serde(default)]
    observations: Vec<ObsEntry>,
    #[serde(default)]
    insertions: Vec<InsertionEntry>,
}

#[derive(Deserialize)]
struct ObsEntry {
    camera: CameraConfig,
    /// HDR radiance target (.hdr) or LDR PNG (de-gammaed on load).
    radiance: Option<PathBuf>,
    depth: Option<PathBuf>,
    sky_mask: Option<PathBuf>,
}

#[derive(Deserialize)]
struct InsertionEntry {
    scene: PathBuf,
    target_foreground: PathBuf,
    target_shadow: PathBuf,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct FitFile {
    #[serde(flatten)]
    base: FitConfig,
    init: InitConfig,
}

#[derive(Deserialize)]
#[serde(default)]
struct InitConfig {
    grid_dims: (usize, usize, usize),
    background_size: (usize, usize),
    sharpness: f64,
    samples_per_ray: usize,
    mapping: LogProjection,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            grid_dims: (8, 8, 4),
            background_size: (
                hlf_core::sky::DEFAULT_BACKGROUND_WIDTH,
                hlf_core::sky::DEFAULT_BACKGROUND_HEIGHT,
            ),
            sharpness: hlf_core::sky::DEFAULT_SHARPNESS,
            samples_per_ray: hlf_core::lightfield::DEFAULT_SAMPLES_PER_RAY,
            mapping: LogProjection::default(),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_radiance_target(path: &Path) -> Result<hlf_core::RgbImage> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("hdr") => io::read_hdr(path),
        _ => {
            // LDR input: decode the pure-gamma encoding into linear radiance.
            let ldr = io::read_png(path)?;
            Ok(ldr.map(|c| c.map(|v| v.powf(2.2))))
        }
    }
}

fn initial_field(init: &str, cfg: &InitConfig, base: &Path, seed: u64) -> Result<HybridLightField> {
    match init {
        "seeded" | "random" => {
            let mut rng = stream_rng(seed, 700, 0);
            let (peak_dir, peak_intensity) = if init == "random" {
                let z: f64 = rng.gen_range(0.1..0.95);
                let az: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let r = (1.0 - z * z).sqrt();
                (
                    Vec3::new(r * az.cos(), r * az.sin(), z),
                    Rgb::gray(rng.gen_range(0.5..5.0)),
                )
            } else {
                (Vec3::Z, Rgb::gray(1.0))
            };
            let background = Image::filled(cfg.background_size.0, cfg.background_size.1, Rgb::gray(0.2));
            let sky = SkyDome::new(peak_dir, peak_intensity, background, cfg.sharpness)?;
            let mut grid = VsgGrid::empty(cfg.grid_dims, cfg.mapping)?;
            for v in &mut grid.voxels {
                *v = VsgVoxel {
                    c: Rgb::gray(0.1),
                    mu: Vec3::Z,
                    sigma: 1.0,
                    alpha: 0.1,
                };
            }
            Ok(HybridLightField::new(sky, grid, cfg.samples_per_ray))
        }
        path => io::read_container(&resolve(base, Path::new(path)), cfg.samples_per_ray),
    }
}

pub fn fit(
    ctx: &Ctx,
    obs_path: &Path,
    init: &str,
    cfg_path: Option<&Path>,
    out: &Path,
    trace_path: Option<&Path>,
) -> Result<()> {
    let obs_text = std::fs::read_to_string(obs_path)
        .map_err(|e| Error::io(obs_path.display().to_string(), e))?;
    let obs_file: ObsFile = serde_json::from_str(&obs_text).map_err(|e| Error::Config {
        path: obs_path.display().to_string(),
        reason: e.to_string(),
    })?;
    let obs_base = obs_path.parent().unwrap_or(Path::new(".")).to_path_buf();

    let mut fit_file = match cfg_path {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
            serde_json::from_str::<FitFile>(&text).map_err(|e| Error::Config {
                path: p.display().to_string(),
                reason: e.to_string(),
            })?
        }
        None => FitFile::default(),
    };
    fit_file.base.bands = ctx.bands;
    if let Some(seed) = ctx.seed {
        fit_file.base.seed = seed;
    }

    let mut observations = Vec::new();
    for entry in &obs_file.observations {
        observations.push(Observation {
            camera: entry.camera.build()?,
            radiance: entry
                .radiance
                .as_ref()
                .map(|p| load_radiance_target(&resolve(&obs_base, p)))
                .transpose()?,
            depth: entry
                .depth
                .as_ref()
                .map(|p| io::read_pfm_scalar(&resolve(&obs_base, p)))
                .transpose()?,
            sky_mask: entry
                .sky_mask
                .as_ref()
                .map(|p| -> Result<_> {
                    Ok(io::read_png(&resolve(&obs_base, p))?
                        .map(|c| if c.r >= 0.5 { 1.0 } else { 0.0 }))
                })
                .transpose()?,
        });
    }

    let mut insertions = Vec::new();
    for entry in &obs_file.insertions {
        let resolved = ctx.resolve_scene(&resolve(&obs_base, &entry.scene))?;
        let record = build_record(&resolved.scene, &resolved.insertion);
        let target_foreground = io::read_hdr(&resolve(&obs_base, &entry.target_foreground))?;
        let target_shadow = match io::read_pfm(&resolve(&obs_base, &entry.target_shadow))? {
            io::PfmImage::Gray(img) => img.map(|&v| Rgb::gray(v)),
            io::PfmImage::Rgb(img) => img,
        };
        insertions.push(InsertionObservation {
            scene: resolved.scene,
            record,
            target_foreground,
            target_shadow,
        });
    }

    if observations.is_empty() && insertions.is_empty() {
        return Err(Error::invalid("observation file lists nothing to fit against"));
    }

    let init_lf = initial_field(init, &fit_file.init, &obs_base, fit_file.base.seed)?;
    println!(
        "fit: {} direct observation(s), {} insertion target(s), {} iterations, init '{init}'",
        observations.len(),
        insertions.len(),
        fit_file.base.iterations
    );

    let outcome = diffopt::fit(&init_lf, &observations, &insertions, &fit_file.base)?;
    if let Some(last) = outcome.trace.last() {
        println!(
            "fit: final losses recon {:.3e} transmit {:.3e} reg {:.3e} depth {:.3e} fg {:.3e} shadow {:.3e}",
            last.recon, last.transmit, last.reg, last.depth, last.insertion_fg, last.insertion_shadow
        );
    }

    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    io::write_container(out, &outcome.lf)?;
    println!("fit: wrote {}", out.display());
    if let Some(tp) = trace_path {
        let mut file =
            std::fs::File::create(tp).map_err(|e| Error::io(tp.display().to_string(), e))?;
        let werr = |e: std::io::Error| Error::io(tp.display().to_string(), e);
        writeln!(file, "iteration,recon,transmit,reg,depth,insertion_fg,insertion_shadow,total")
            .map_err(werr)?;
        for row in &outcome.trace {
            writeln!(
                file,
                "{},{},{},{},{},{},{},{}",
                row.iteration,
                row.recon,
                row.transmit,
                row.reg,
                row.depth,
                row.insertion_fg,
                row.insertion_shadow,
                row.total
            )
            .map_err(werr)?;
        }
        println!("fit: wrote {}", tp.display());
    }
    Ok(())
}

pub fn gradcheck(ctx: &Ctx, scene: Option<&Path>, tolerance: f64, fd_step: f64) -> Result<()> {
    let seed = ctx.seed.unwrap_or(0);
    let ts = match scene {
        None => tiny_scene(seed),
        Some(path) => {
            let resolved = ctx.resolve_scene(path)?;
            let lf = resolved.light_field;
            let params = lf.grid.voxel_count() * 8
                + 6
                + lf.sky.background.len() * 3;
            if params > 10_000 {
                return Err(Error::invalid(format!(
                    "{params} lighting parameters is too many for finite differences (max 10000)"
                )));
            }
            let record = build_record(&resolved.scene, &resolved.insertion);
            let mut rng = stream_rng(seed, 901, 0);
            let weights = Image::from_fn(
                resolved.scene.camera.width,
                resolved.scene.camera.height,
                |_, _| {
                    Rgb::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                },
            );
            diffopt::TinyScene { scene: resolved.scene, record, lf, weights }
        }
    };

    let report = grad_check(&ts, tolerance, fd_step, ctx.bands)?;
    println!(
        "gradcheck: {} parameters checked, {} skipped, max relative error {:.3e} (tolerance {:.1e})",
        report.checked,
        report.skipped.len(),
        report.max_rel_err,
        report.tolerance
    );
    for s in &report.skipped {
        println!("gradcheck: skipped {s}");
    }
    if report.passed() {
        println!("gradcheck: PASS");
        Ok(())
    } else {
        println!("gradcheck: FAIL at {}", report.worst_param);
        Err(Error::Numerical(format!(
            "gradient check failed: max relative error {:.3e} at {}",
            report.max_rel_err, report.worst_param
        )))
    }
}
