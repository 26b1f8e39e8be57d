//! Primary-ray G-buffer for the inserted mesh.

use crate::geometry::{depth_valid, Bvh, PinholeCamera, TriMesh};
use crate::image::{Image, ScalarImage};
use crate::math::Vec3;

/// Per-pixel intersection record for the inserted object. Entries are only
/// meaningful where `mask` is set.
#[derive(Clone, Debug)]
pub struct GBuffer {
    pub mask: Image<bool>,
    pub position: Image<Vec3>,
    pub normal: Image<Vec3>,
    /// Index into the mesh material table.
    pub material: Image<u16>,
    /// Camera z-depth of the object hit.
    pub depth: Image<f64>,
}

impl GBuffer {
    /// Pixels with `mask` set, in raster order.
    pub fn mask_pixels(&self) -> Vec<(usize, usize)> {
        self.mask
            .enumerate()
            .filter_map(|(x, y, &m)| m.then_some((x, y)))
            .collect()
    }

    pub fn coverage(&self) -> usize {
        self.mask.pixels().iter().filter(|&&m| m).count()
    }
}

/// Trace one primary ray per pixel against the posed mesh; pixels where the
/// scene depth map is closer than the object hit are masked out (the scene
/// occludes the object).
pub fn rasterize_gbuffer(
    cam: &PinholeCamera,
    mesh: &TriMesh,
    bvh: &Bvh,
    scene_depth: Option<&ScalarImage>,
) -> GBuffer {
    let mut mask = Image::filled(cam.width, cam.height, false);
    let mut position = Image::filled(cam.width, cam.height, Vec3::ZERO);
    let mut normal = Image::filled(cam.width, cam.height, Vec3::Z);
    let mut material = Image::filled(cam.width, cam.height, 0u16);
    let mut depth = Image::filled(cam.width, cam.height, 0.0f64);

    for y in 0..cam.height {
        for x in 0..cam.width {
            let ray = cam
                .pixel_ray(x as f64 + 0.5, y as f64 + 0.5)
                .expect("pixel center in bounds");
            let Some(hit) = bvh.intersect(mesh, &ray, f64::INFINITY) else {
                continue;
            };
            let z = cam.z_depth(hit.position);
            if let Some(sd) = scene_depth {
                let d = *sd.get(x, y);
                if depth_valid(d) && d < z {
                    continue;
                }
            }
            *mask.get_mut(x, y) = true;
            *position.get_mut(x, y) = hit.position;
            *normal.get_mut(x, y) = hit.normal;
            *material.get_mut(x, y) = mesh.tri_material[hit.triangle];
            *depth.get_mut(x, y) = z;
        }
    }
    GBuffer { mask, position, normal, material, depth }
}
