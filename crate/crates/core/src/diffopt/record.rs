//! Backward pass through a recorded insertion: composition and tonemap,
//! ratio shadow map, foreground shading, down to the lighting parameters.
//!
//! Gradients accumulate into per-band [`AdjointBuffer`]s over fixed
//! contiguous work ranges, merged in band order, so a given (record, lf,
//! bands) triple always produces bit-identical gradients regardless of
//! thread scheduling.

use super::adjoint::{radiance_backward, Workspace};
use super::AdjointBuffer;
use crate::image::{bilinear_taps_clamp, row_bands, Image, RgbImage};
use crate::insertion::{
    per_pixel_rays, shade_foreground, shadow_ratio, shared_ray_weight, shared_sphere_dirs,
    InsertionRecord, InsertionScene, RayStrategy, ShadowPixel,
};
use crate::lightfield::HybridLightField;
use crate::math::Rgb;
use crate::sky::tonemap_channel_derivative;
use rayon::prelude::*;

/// Upstream gradients of an insertion pass; any subset may be present.
/// `d_composite` is w.r.t. the LDR edit, `d_foreground` w.r.t. the HDR
/// object render, `d_shadow` w.r.t. the stored ratio-map channels.
#[derive(Default)]
pub struct OutputGrads<'a> {
    pub d_composite: Option<&'a RgbImage>,
    pub d_foreground: Option<&'a RgbImage>,
    pub d_shadow: Option<&'a RgbImage>,
}

/// Reverse the recorded insertion pass; returns adjoints for every lighting
/// parameter with the peak-direction gradient tangent-projected.
pub fn insertion_backward(
    record: &InsertionRecord,
    scene: &InsertionScene,
    lf: &HybridLightField,
    grads: &OutputGrads,
    bands: usize,
) -> AdjointBuffer {
    let (w, h) = (scene.background.width(), scene.background.height());
    let cfg = &record.cfg;

    let mut d_fg = Image::filled(w, h, Rgb::BLACK);
    if let Some(g) = grads.d_foreground {
        for (a, b) in d_fg.pixels_mut().iter_mut().zip(g.pixels()) {
            *a += *b;
        }
    }
    let mut d_shadow_stored = Image::filled(cfg.shadow_width, cfg.shadow_height, Rgb::BLACK);
    if let Some(g) = grads.d_shadow {
        for (a, b) in d_shadow_stored.pixels_mut().iter_mut().zip(g.pixels()) {
            *a += *b;
        }
    }

    // Composite chain: foreground pixels through the tonemap, background
    // pixels through de-gamma * S re-gamma and the bilinear upsample.
    if let Some(d_comp) = grads.d_composite {
        let fg = shade_foreground(record, lf);
        let shadow = shadow_ratio(record, lf);
        let s_up = shadow.upsample(w, h);
        for y in 0..h {
            for x in 0..w {
                let d = *d_comp.get(x, y);
                if *record.gbuffer.mask.get(x, y) {
                    let v = *fg.get(x, y);
                    let g = d_fg.get_mut(x, y);
                    g.r += d.r * tonemap_channel_derivative(v.r, &scene.tone);
                    g.g += d.g * tonemap_channel_derivative(v.g, &scene.tone);
                    g.b += d.b * tonemap_channel_derivative(v.b, &scene.tone);
                } else {
                    let bg = *scene.background.get(x, y);
                    let s = *s_up.get(x, y);
                    let gamma = scene.tone.gamma;
                    let d_s = Rgb::new(
                        d.r * crate::insertion::shade_background_channel_ds(bg.r, s.r, gamma),
                        d.g * crate::insertion::shade_background_channel_ds(bg.g, s.g, gamma),
                        d.b * crate::insertion::shade_background_channel_ds(bg.b, s.b, gamma),
                    );
                    // Transpose of the bilinear upsample.
                    let sx = cfg.shadow_width as f64 / w as f64;
                    let sy = cfg.shadow_height as f64 / h as f64;
                    let (taps, tw) = bilinear_taps_clamp(
                        cfg.shadow_width,
                        cfg.shadow_height,
                        (x as f64 + 0.5) * sx,
                        (y as f64 + 0.5) * sy,
                    );
                    for i in 0..4 {
                        *d_shadow_stored.get_mut(taps[i].0, taps[i].1) += d_s * tw[i];
                    }
                }
            }
        }
    }

    let mut total = shadow_backward(record, lf, &d_shadow_stored, bands);
    let fg_adj = foreground_backward(record, lf, &d_fg, bands);
    total.merge(&fg_adj);
    total.project_peak_dir(lf.sky.peak_dir);
    total
}

/// Map the gradient on the stored ratio channels to the underlying
/// per-channel ratios. Scalar maps store gray(mean(S_rgb)), so each stored channel
/// feeds back 1/3 into every underlying channel.
fn stored_to_ratio_grad(d_stored: Rgb, scalar: bool) -> Rgb {
    if scalar {
        Rgb::gray((d_stored.r + d_stored.g + d_stored.b) / 3.0)
    } else {
        d_stored
    }
}

fn shadow_backward(
    record: &InsertionRecord,
    lf: &HybridLightField,
    d_stored: &RgbImage,
    bands: usize,
) -> AdjointBuffer {
    let scalar = !record.cfg.rgb_shadow;
    let ambient = record.cfg.ambient;
    let items: Vec<(&ShadowPixel, Rgb)> = record
        .shadow_pixels
        .iter()
        .enumerate()
        .filter_map(|(i, entry)| {
            let sp = entry.as_ref()?;
            let d = stored_to_ratio_grad(d_stored.pixels()[i], scalar);
            (d != Rgb::BLACK).then_some((sp, d))
        })
        .collect();

    banded(&items, bands, lf, |&(sp, d_ratio), adj, ws, radiances| {
        radiances.clear();
        let mut num = Rgb::BLACK;
        let mut den = Rgb::BLACK;
        for (k, (&dir, &wt)) in record.shadow_dirs.iter().zip(&record.shadow_weights).enumerate() {
            let l = lf.radiance(sp.point, dir);
            radiances.push(l);
            den += l * wt;
            if sp.occluded.get(k) {
                num += Rgb::gray(ambient) * wt;
            } else {
                num += l * wt;
            }
        }
        // S_c = num_c / den_c (1 when den_c = 0, which has zero gradient).
        let mut d_num = Rgb::BLACK;
        let mut d_den = Rgb::BLACK;
        for ch in 0..3 {
            let dc = den.channel(ch);
            if dc > 0.0 {
                let dr = d_ratio.channel(ch);
                *d_num.channel_mut(ch) = dr / dc;
                *d_den.channel_mut(ch) = -dr * num.channel(ch) / (dc * dc);
            }
        }
        for (k, (&dir, &wt)) in record.shadow_dirs.iter().zip(&record.shadow_weights).enumerate() {
            let mut d_l = d_den * wt;
            if !sp.occluded.get(k) {
                d_l += d_num * wt;
            }
            if d_l != Rgb::BLACK {
                radiance_backward(lf, sp.point, dir, d_l, adj, ws);
            }
        }
    })
}

fn foreground_backward(
    record: &InsertionRecord,
    lf: &HybridLightField,
    d_fg: &RgbImage,
    bands: usize,
) -> AdjointBuffer {
    let cfg = &record.cfg;
    // Blocked rays contribute the constant ambient value; no gradient flows
    // through them.
    match cfg.strategy {
        RayStrategy::SharedSphere { rays } => {
            let dirs = shared_sphere_dirs(rays, cfg.seed);
            // Phase 1: fold per-pixel gradients onto the shared ray set.
            let ranges = row_bands(record.fg_pixels.len(), bands);
            let partials: Vec<Vec<Rgb>> = ranges
                .par_iter()
                .map(|&(start, n)| {
                    let mut acc = vec![Rgb::BLACK; dirs.len()];
                    for px in &record.fg_pixels[start..start + n] {
                        let d = *d_fg.get(px.x, px.y);
                        if d == Rgb::BLACK {
                            continue;
                        }
                        for (k, &dir) in dirs.iter().enumerate() {
                            if px.blocked.get(k) {
                                continue;
                            }
                            let wgt = shared_ray_weight(&px.material, px.normal, px.view, dir, rays);
                            if wgt != Rgb::BLACK {
                                acc[k] += d * wgt;
                            }
                        }
                    }
                    acc
                })
                .collect();
            let mut d_rays = vec![Rgb::BLACK; dirs.len()];
            for part in &partials {
                for (a, b) in d_rays.iter_mut().zip(part) {
                    *a += *b;
                }
            }
            // Phase 2: one radiance adjoint per shared direction.
            let items: Vec<(usize, Rgb)> = d_rays
                .into_iter()
                .enumerate()
                .filter(|(_, d)| *d != Rgb::BLACK)
                .collect();
            banded(&items, bands, lf, |&(k, d), adj, ws, _| {
                radiance_backward(lf, record.shared_center, dirs[k], d, adj, ws);
            })
        }
        strategy => {
            let items: Vec<(usize, Rgb)> = record
                .fg_pixels
                .iter()
                .enumerate()
                .filter_map(|(i, px)| {
                    let d = *d_fg.get(px.x, px.y);
                    (d != Rgb::BLACK).then_some((i, d))
                })
                .collect();
            banded(&items, bands, lf, |&(i, d), adj, ws, _| {
                let px = &record.fg_pixels[i];
                let rays = per_pixel_rays(strategy, &px.material, px.normal, px.view, cfg.seed, px.pixel_index);
                for (k, ray) in rays.iter().enumerate() {
                    if ray.weight == Rgb::BLACK || px.blocked.get(k) {
                        continue;
                    }
                    radiance_backward(lf, px.position, ray.dir, d * ray.weight, adj, ws);
                }
            })
        }
    }
}

/// Run `f` over fixed contiguous bands of `items`, one adjoint buffer per
/// band, merged in band order.
fn banded<T: Sync>(
    items: &[T],
    bands: usize,
    lf: &HybridLightField,
    f: impl Fn(&T, &mut AdjointBuffer, &mut Workspace, &mut Vec<Rgb>) + Sync,
) -> AdjointBuffer {
    let ranges = row_bands(items.len(), bands);
    let parts: Vec<AdjointBuffer> = ranges
        .par_iter()
        .map(|&(start, n)| {
            let mut adj = AdjointBuffer::zeros_like(lf);
            let mut ws = Workspace::default();
            let mut scratch = Vec::new();
            for item in &items[start..start + n] {
                f(item, &mut adj, &mut ws, &mut scratch);
            }
            adj
        })
        .collect();
    let mut total = AdjointBuffer::zeros_like(lf);
    for p in &parts {
        total.merge(p);
    }
    total
}
