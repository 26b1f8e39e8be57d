//! JSON scene / observation configuration and its resolution into runtime
//! objects. Relative paths resolve against the config file's directory.

use super::container::read_container;
use super::hdr::{read_hdr, read_png};
use super::pfm::read_pfm_scalar;
use crate::brdf::MaterialParams;
use crate::error::{Error, Result};
use crate::geometry::{load_obj, PinholeCamera, TriMesh};
use crate::image::Image;
use crate::insertion::{InsertionConfig, InsertionScene, RayStrategy};
use crate::lightfield::HybridLightField;
use crate::math::{Rgb, Vec3};
use crate::sky::{SkyDome, DEFAULT_BACKGROUND_HEIGHT, DEFAULT_BACKGROUND_WIDTH, DEFAULT_SHARPNESS};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Background photograph (8-bit PNG, sRGB).
    pub image: PathBuf,
    /// Scene depth in meters (PFM, camera z-depth).
    pub depth: PathBuf,
    pub camera: CameraConfig,
    pub object: ObjectConfig,
    pub lighting: LightingConfig,
    #[serde(default)]
    pub render: RenderConfig,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_camera_height")]
    pub height_above_ground: f64,
}

fn default_camera_height() -> f64 {
    1.5
}

impl CameraConfig {
    pub fn build(&self) -> Result<PinholeCamera> {
        PinholeCamera::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
            PinholeCamera::street_pose(self.height_above_ground),
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObjectConfig {
    pub mesh: PathBuf,
    pub translation: Vec3,
    #[serde(default)]
    pub yaw_degrees: f64,
    /// Override applied to every OBJ material without a named entry.
    #[serde(default)]
    pub material: Option<MaterialParams>,
    /// Per-OBJ-material-name overrides.
    #[serde(default)]
    pub materials: BTreeMap<String, MaterialParams>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LightingConfig {
    /// Path to an HLF1 container.
    Container(PathBuf),
    /// Inline analytic sky over an empty volume.
    Analytic { sky: AnalyticSky },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalyticSky {
    pub peak_dir: Vec3,
    pub peak_intensity: Rgb,
    #[serde(default = "default_background")]
    pub background: BackgroundConfig,
    #[serde(default = "default_sharpness")]
    pub sharpness: f64,
}

fn default_sharpness() -> f64 {
    DEFAULT_SHARPNESS
}

fn default_background() -> BackgroundConfig {
    BackgroundConfig::Constant(Rgb::gray(0.1))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BackgroundConfig {
    Constant(Rgb),
    Map(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    /// Training-scale: 5000 shared rays, 160x90 shadow map.
    Draft,
    /// Per-pixel importance sampling, 160x90 shadow map.
    Paper,
    /// Per-pixel importance sampling, full-resolution shadow map.
    Final,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub quality: Quality,
    /// Overrides the preset's foreground ray budget (total for draft,
    /// per-pixel split sum is not overridable here).
    pub fg_rays: Option<usize>,
    pub diffuse_rays: Option<usize>,
    pub specular_rays: Option<usize>,
    pub shadow_rays: usize,
    pub shadow_resolution: Option<(usize, usize)>,
    pub samples_per_ray: usize,
    pub ambient: f64,
    pub rgb_shadow: bool,
    pub self_occlusion: bool,
    pub seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            quality: Quality::Draft,
            fg_rays: None,
            diffuse_rays: None,
            specular_rays: None,
            shadow_rays: 450,
            shadow_resolution: None,
            samples_per_ray: 128,
            ambient: 0.1,
            rgb_shadow: false,
            self_occlusion: true,
            seed: 0,
        }
    }
}

impl RenderConfig {
    pub fn insertion_config(&self, image_w: usize, image_h: usize) -> InsertionConfig {
        let strategy = match self.quality {
            Quality::Draft => RayStrategy::SharedSphere { rays: self.fg_rays.unwrap_or(5000) },
            Quality::Paper | Quality::Final => RayStrategy::ImportanceSplit {
                diffuse: self.diffuse_rays.unwrap_or(1024),
                specular: self.specular_rays.unwrap_or(256),
            },
        };
        let (sw, sh) = self.shadow_resolution.unwrap_or(match self.quality {
            Quality::Draft | Quality::Paper => (160, 90),
            Quality::Final => (image_w, image_h),
        });
        InsertionConfig {
            strategy,
            shadow_rays: self.shadow_rays,
            shadow_width: sw.min(image_w).max(1),
            shadow_height: sh.min(image_h).max(1),
            ambient: self.ambient,
            rgb_shadow: self.rgb_shadow,
            self_occlusion: self.self_occlusion,
            seed: self.seed,
        }
    }
}

/// A scene config resolved against the filesystem.
pub struct ResolvedScene {
    pub config: SceneConfig,
    pub scene: InsertionScene,
    pub light_field: HybridLightField,
    pub insertion: InsertionConfig,
}

pub fn load_scene_config(path: &Path) -> Result<SceneConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Build the analytic sky dome of a lighting config.
pub fn build_sky(sky: &AnalyticSky, base: &Path) -> Result<SkyDome> {
    let background = match &sky.background {
        BackgroundConfig::Constant(c) => Image::filled(
            DEFAULT_BACKGROUND_WIDTH,
            DEFAULT_BACKGROUND_HEIGHT,
            *c,
        ),
        BackgroundConfig::Map(p) => read_hdr(&resolve_path(base, p))?,
    };
    SkyDome::new(
        sky.peak_dir.normalized_or(Vec3::Z),
        sky.peak_intensity,
        background,
        sky.sharpness,
    )
}

pub fn load_light_field(
    lighting: &LightingConfig,
    base: &Path,
    samples_per_ray: usize,
) -> Result<HybridLightField> {
    match lighting {
        LightingConfig::Container(p) => read_container(&resolve_path(base, p), samples_per_ray),
        LightingConfig::Analytic { sky } => {
            let mut lf = HybridLightField::sky_only(build_sky(sky, base)?);
            lf.samples_per_ray = samples_per_ray.max(1);
            Ok(lf)
        }
    }
}

/// Load and validate everything a scene references.
pub fn resolve_scene(path: &Path) -> Result<ResolvedScene> {
    let config = load_scene_config(path)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let config_err = |reason: String| Error::Config {
        path: path.display().to_string(),
        reason,
    };

    let camera = config.camera.build()?;
    let background = read_png(&resolve_path(&base, &config.image))?;
    if background.width() != camera.width || background.height() != camera.height {
        return Err(config_err(format!(
            "image is {}x{} but the camera says {}x{}",
            background.width(),
            background.height(),
            camera.width,
            camera.height
        )));
    }
    let depth = read_pfm_scalar(&resolve_path(&base, &config.depth))?;
    if !depth.same_size(&background) {
        return Err(config_err("depth map size does not match the image".into()));
    }

    let data = load_obj(&resolve_path(&base, &config.object.mesh))?;
    let materials: Vec<MaterialParams> = data
        .material_names
        .iter()
        .map(|name| {
            config
                .object
                .materials
                .get(name)
                .or(config.object.material.as_ref())
                .copied()
                .unwrap_or_default()
                .clamped()
        })
        .collect();
    let mesh = TriMesh::build(data, materials)?
        .posed(config.object.translation, config.object.yaw_degrees.to_radians());
    if mesh.degenerate_dropped > 0 {
        eprintln!(
            "warning: dropped {} degenerate triangle(s) from {}",
            mesh.degenerate_dropped,
            config.object.mesh.display()
        );
    }

    let light_field =
        load_light_field(&config.lighting, &base, config.render.samples_per_ray)?;
    let (lo, hi) = light_field.grid.mapping.world_box();
    let t = config.object.translation;
    if t.x < lo.x || t.x > hi.x || t.y < lo.y || t.y > hi.y || t.z < lo.z || t.z > hi.z {
        return Err(config_err(format!(
            "object translation {t:?} lies outside the lighting volume [{lo:?}, {hi:?}]"
        )));
    }

    let insertion = config.render.insertion_config(camera.width, camera.height);
    let scene = InsertionScene::new(camera, background, depth, mesh)?;
    Ok(ResolvedScene { config, scene, light_field, insertion })
}
