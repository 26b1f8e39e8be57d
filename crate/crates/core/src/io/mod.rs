//! File formats (PFM, Radiance HDR, PNG, the HLF1 light-field container) and
//! scene / observation configuration.

mod container;
mod hdr;
mod pfm;
mod scene;

pub use container::{read_container, write_container};
pub use hdr::{read_hdr, read_png, write_hdr, write_png, write_png_mask};
pub use pfm::{read_pfm, read_pfm_scalar, write_pfm_rgb, write_pfm_scalar, PfmImage};
pub use scene::{
    build_sky, load_light_field, load_scene_config, resolve_scene, AnalyticSky, BackgroundConfig,
    CameraConfig, LightingConfig, ObjectConfig, Quality, RenderConfig, ResolvedScene, SceneConfig,
};
