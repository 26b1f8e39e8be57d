//! Differentiable losses on the light field: radiance reconstruction, sky
//! transmittance separation, alpha regularization, depth consistency, and
//! pixel losses on insertion renders.

use super::adjoint::{depth_ray_backward, radiance_backward, transmittance_backward, Workspace};
use super::record::{insertion_backward, OutputGrads};
use super::AdjointBuffer;
use crate::error::{Error, Result};
use crate::geometry::{depth_valid, PinholeCamera};
use crate::image::{row_bands, Image, RgbImage, ScalarImage};
use crate::insertion::{shade_foreground, shadow_ratio, InsertionRecord, InsertionScene};
use crate::lightfield::HybridLightField;
use crate::math::Rgb;
use rayon::prelude::*;

const TAU_CLAMP: f64 = 1e-6;

fn check_size<T>(cam: &PinholeCamera, img: &crate::image::Image<T>) -> Result<()> {
    if img.width() != cam.width || img.height() != cam.height {
        return Err(Error::SizeMismatch {
            expected_w: cam.width,
            expected_h: cam.height,
            got_w: img.width(),
            got_h: img.height(),
        });
    }
    Ok(())
}

/// Mean squared error between per-pixel camera-ray radiance and a target
/// HDR image, with its gradient.
pub fn loss_radiance_recon(
    lf: &HybridLightField,
    cam: &PinholeCamera,
    target: &RgbImage,
    bands: usize,
) -> Result<(f64, AdjointBuffer)> {
    check_size(cam, target)?;
    let npx = (cam.width * cam.height) as f64;
    let norm = 3.0 * npx;
    let ranges = row_bands(cam.height, bands);
    let parts: Vec<(f64, AdjointBuffer)> = ranges
        .par_iter()
        .map(|&(y0, rows)| {
            let mut adj = AdjointBuffer::zeros_like(lf);
            let mut ws = Workspace::default();
            let mut loss = 0.0;
            for y in y0..y0 + rows {
                for x in 0..cam.width {
                    let ray = cam
                        .pixel_ray(x as f64 + 0.5, y as f64 + 0.5)
                        .expect("pixel center in bounds");
                    let v = lf.radiance(ray.origin, ray.direction);
                    let t = *target.get(x, y);
                    let d = v - t;
                    loss += (d.r * d.r + d.g * d.g + d.b * d.b) / norm;
                    let d_v = d * (2.0 / norm);
                    radiance_backward(lf, ray.origin, ray.direction, d_v, &mut adj, &mut ws);
                }
            }
            (loss, adj)
        })
        .collect();
    let mut loss = 0.0;
    let mut adj = AdjointBuffer::zeros_like(lf);
    for (l, a) in &parts {
        loss += l;
        adj.merge(a);
    }
    adj.project_peak_dir(lf.sky.peak_dir);
    Ok((loss, adj))
}

/// Binary cross entropy between the per-pixel sky transmittance tau_K and a
/// sky mask (1 = sky visible), with its gradient on the alpha channel.
pub fn loss_sky_separation(
    lf: &HybridLightField,
    cam: &PinholeCamera,
    sky_mask: &ScalarImage,
    bands: usize,
) -> Result<(f64, AdjointBuffer)> {
    check_size(cam, sky_mask)?;
    let npx = (cam.width * cam.height) as f64;
    let ranges = row_bands(cam.height, bands);
    let parts: Vec<(f64, AdjointBuffer)> = ranges
        .par_iter()
        .map(|&(y0, rows)| {
            let mut adj = AdjointBuffer::zeros_like(lf);
            let mut ws = Workspace::default();
            let mut loss = 0.0;
            for y in y0..y0 + rows {
                for x in 0..cam.width {
                    let ray = cam
                        .pixel_ray(x as f64 + 0.5, y as f64 + 0.5)
                        .expect("pixel center in bounds");
                    let m = *sky_mask.get(x, y);
                    let tau = lf.transmittance(ray.origin, ray.direction);
                    let clamped = tau.clamp(TAU_CLAMP, 1.0 - TAU_CLAMP);
                    loss += -(m * clamped.ln() + (1.0 - m) * (1.0 - clamped).ln()) / npx;
                    if tau > TAU_CLAMP && tau < 1.0 - TAU_CLAMP {
                        let d_tau = (-m / clamped + (1.0 - m) / (1.0 - clamped)) / npx;
                        transmittance_backward(lf, ray.origin, ray.direction, d_tau, &mut adj, &mut ws);
                    }
                }
            }
            (loss, adj)
        })
        .collect();
    let mut loss = 0.0;
    let mut adj = AdjointBuffer::zeros_like(lf);
    for (l, a) in &parts {
        loss += l;
        adj.merge(a);
    }
    Ok((loss, adj))
}

/// Mean of alpha (1 - alpha) over the grid: zero exactly when every voxel is
/// fully transparent or fully opaque.
pub fn loss_alpha_reg(lf: &HybridLightField) -> (f64, AdjointBuffer) {
    let mut adj = AdjointBuffer::zeros_like(lf);
    let n = lf.grid.voxel_count() as f64;
    let mut loss = 0.0;
    for (v, a) in lf.grid.voxels.iter().zip(&mut adj.voxels) {
        loss += v.alpha * (1.0 - v.alpha) / n;
        a.alpha = (1.0 - 2.0 * v.alpha) / n;
    }
    (loss, adj)
}

/// L1 error between the alpha-rendered depth map and a target depth over its
/// valid pixels.
pub fn loss_depth_recon(
    lf: &HybridLightField,
    cam: &PinholeCamera,
    target: &ScalarImage,
    bands: usize,
) -> Result<(f64, AdjointBuffer)> {
    check_size(cam, target)?;
    let valid = target.pixels().iter().filter(|&&d| depth_valid(d)).count();
    if valid == 0 {
        return Ok((0.0, AdjointBuffer::zeros_like(lf)));
    }
    let rendered = crate::volume::render_depth(&lf.grid, cam, lf.samples_per_ray);
    let norm = valid as f64;
    let ranges = row_bands(cam.height, bands);
    let parts: Vec<(f64, AdjointBuffer)> = ranges
        .par_iter()
        .map(|&(y0, rows)| {
            let mut adj = AdjointBuffer::zeros_like(lf);
            let mut ws = Workspace::default();
            let mut loss = 0.0;
            for y in y0..y0 + rows {
                for x in 0..cam.width {
                    let t = *target.get(x, y);
                    if !depth_valid(t) {
                        continue;
                    }
                    let d = *rendered.get(x, y);
                    loss += (d - t).abs() / norm;
                    let sign = if d > t {
                        1.0
                    } else if d < t {
                        -1.0
                    } else {
                        0.0
                    };
                    if sign != 0.0 {
                        let ray = cam
                            .pixel_ray(x as f64 + 0.5, y as f64 + 0.5)
                            .expect("pixel center in bounds");
                        depth_ray_backward(
                            &lf.grid,
                            ray.origin,
                            ray.direction,
                            lf.samples_per_ray,
                            sign / norm,
                            &mut adj,
                            &mut ws,
                        );
                    }
                }
            }
            (loss, adj)
        })
        .collect();
    let mut loss = 0.0;
    let mut adj = AdjointBuffer::zeros_like(lf);
    for (l, a) in &parts {
        loss += l;
        adj.merge(a);
    }
    Ok((loss, adj))
}

/// Pixel losses on insertion renders against targets: log-encoded L2 on the
/// HDR foreground over mask pixels plus MSE on the ratio shadow map.
/// Returns the two unweighted component losses; the adjoint carries the
/// given weights.
pub fn loss_insertion_recon(
    record: &InsertionRecord,
    scene: &InsertionScene,
    lf: &HybridLightField,
    target_foreground: &RgbImage,
    target_shadow: &RgbImage,
    fg_weight: f64,
    shadow_weight: f64,
    bands: usize,
) -> Result<(f64, f64, AdjointBuffer)> {
    if !target_foreground.same_size(&scene.background) {
        return Err(Error::SizeMismatch {
            expected_w: scene.background.width(),
            expected_h: scene.background.height(),
            got_w: target_foreground.width(),
            got_h: target_foreground.height(),
        });
    }
    if target_shadow.width() != record.cfg.shadow_width
        || target_shadow.height() != record.cfg.shadow_height
    {
        return Err(Error::SizeMismatch {
            expected_w: record.cfg.shadow_width,
            expected_h: record.cfg.shadow_height,
            got_w: target_shadow.width(),
            got_h: target_shadow.height(),
        });
    }

    let fg = shade_foreground(record, lf);
    let shadow = shadow_ratio(record, lf);

    let mut fg_loss = 0.0;
    let mut d_fg = Image::filled(fg.width(), fg.height(), Rgb::BLACK);
    let n_mask = record.fg_pixels.len().max(1) as f64;
    for px in &record.fg_pixels {
        let v = *fg.get(px.x, px.y);
        let t = *target_foreground.get(px.x, px.y);
        let mut d = Rgb::BLACK;
        for ch in 0..3 {
            let diff = v.channel(ch).ln_1p() - t.channel(ch).ln_1p();
            fg_loss += diff * diff / (3.0 * n_mask);
            *d.channel_mut(ch) =
                fg_weight * 2.0 * diff / ((1.0 + v.channel(ch)) * 3.0 * n_mask);
        }
        *d_fg.get_mut(px.x, px.y) = d;
    }

    let mut shadow_loss = 0.0;
    let n_shadow = (record.cfg.shadow_width * record.cfg.shadow_height) as f64;
    let mut d_shadow = Image::filled(record.cfg.shadow_width, record.cfg.shadow_height, Rgb::BLACK);
    for (i, (v, t)) in shadow
        .values
        .pixels()
        .iter()
        .zip(target_shadow.pixels())
        .enumerate()
    {
        let d = *v - *t;
        shadow_loss += (d.r * d.r + d.g * d.g + d.b * d.b) / (3.0 * n_shadow);
        d_shadow.pixels_mut()[i] = d * (shadow_weight * 2.0 / (3.0 * n_shadow));
    }

    let grads = OutputGrads {
        d_composite: None,
        d_foreground: Some(&d_fg),
        d_shadow: Some(&d_shadow),
    };
    let adj = insertion_backward(record, scene, lf, &grads, bands);
    Ok((fg_loss, shadow_loss, adj))
}
