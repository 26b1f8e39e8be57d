//! Hand-derived reverse-mode adjoints of the radiance query and its
//! relatives.
//!
//! The compositing sum L = sum_k tau_{k-1} alpha_k g_k + tau_K env is
//! differentiated through its nested form R_k = alpha_k g_k + (1-alpha_k)
//! R_{k+1} with R_{K+1} = env, which gives
//!
//!   dL/d alpha_k = tau_{k-1} (g_k - R_{k+1})
//!
//! without dividing by (1 - alpha): exact even at alpha = 1. Backward passes
//! replay the forward sampling (same ray, same voxels) instead of storing a
//! tape.

use super::AdjointBuffer;
use crate::geometry::equirect_dir_to_px;
use crate::image::bilinear_taps_wrap_x;
use crate::lightfield::{ray_box_span, HybridLightField};
use crate::math::{Rgb, Vec3};
use crate::sky::SkyDome;
use crate::volume::VsgGrid;

/// Reusable per-worker scratch for ray replays.
#[derive(Default)]
pub struct Workspace {
    samples: Vec<SampleSlot>,
}

struct SampleSlot {
    voxel: usize,
    t: f64,
    alpha: f64,
    /// exp(-(1 + l.mu)/sigma^2)
    lobe_exp: f64,
    g: Rgb,
    /// Transmittance in front of this sample.
    tau_before: f64,
}

/// Accumulate d(loss)/d(sky parameters) for one sky lookup with upstream
/// gradient `d_out` (the caller folds in the transmittance weight).
pub fn sky_radiance_backward(sky: &SkyDome, l: Vec3, d_out: Rgb, adj: &mut AdjointBuffer) {
    let (px, py) = equirect_dir_to_px(l, sky.background.width(), sky.background.height());
    let (taps, w) = bilinear_taps_wrap_x(sky.background.width(), sky.background.height(), px, py);
    for i in 0..4 {
        *adj.background.get_mut(taps[i].0, taps[i].1) += d_out * w[i];
    }
    let e = (sky.sharpness * (l.dot(sky.peak_dir) - 1.0)).exp();
    adj.peak_intensity += d_out * e;
    let coeff = d_out.r * sky.peak_intensity.r
        + d_out.g * sky.peak_intensity.g
        + d_out.b * sky.peak_intensity.b;
    adj.peak_dir += l * (coeff * e * sky.sharpness);
}

/// Adjoints of `HybridLightField::radiance` w.r.t. every lighting parameter.
pub fn radiance_backward(
    lf: &HybridLightField,
    x: Vec3,
    l: Vec3,
    d_out: Rgb,
    adj: &mut AdjointBuffer,
    ws: &mut Workspace,
) {
    let (bb_min, bb_max) = lf.grid.mapping.world_box();
    let Some((t0, t1)) = ray_box_span(bb_min, bb_max, x, l) else {
        sky_radiance_backward(&lf.sky, l, d_out, adj);
        return;
    };

    // Replay the forward march. Samples with alpha = 0 contribute nothing to
    // the value but still carry d/d alpha = tau (g - R_next), so they are
    // kept (no vacuum shortcut on the backward path).
    let k_count = lf.samples_per_ray;
    let dt = (t1 - t0) / k_count as f64;
    ws.samples.clear();
    let mut tau = 1.0f64;
    for k in 0..k_count {
        let t = t0 + (k as f64 + 0.5) * dt;
        let p = x + l * t;
        if let Some((ix, iy, iz)) = lf.grid.world_to_voxel(p) {
            let idx = lf.grid.flat_index(ix, iy, iz);
            let v = &lf.grid.voxels[idx];
            let lobe_exp = (-(1.0 + l.dot(v.mu)) / (v.sigma * v.sigma)).exp();
            ws.samples.push(SampleSlot {
                voxel: idx,
                t,
                alpha: v.alpha,
                lobe_exp,
                g: v.c * lobe_exp,
                tau_before: tau,
            });
            tau *= 1.0 - v.alpha;
        }
    }
    let tau_final = tau;
    let env = lf.sky.radiance(l);

    // Suffix radiance R_{k+1} built back to front.
    let mut r_next = env;
    for s in ws.samples.iter().rev() {
        let v = &lf.grid.voxels[s.voxel];
        let va = &mut adj.voxels[s.voxel];

        // d alpha: tau_before * (g - R_next), contracted with d_out.
        va.alpha += d_out.r * s.tau_before * (s.g.r - r_next.r)
            + d_out.g * s.tau_before * (s.g.g - r_next.g)
            + d_out.b * s.tau_before * (s.g.b - r_next.b);

        // d g = d_out * tau_before * alpha.
        let w = s.tau_before * s.alpha;
        va.c += d_out * (w * s.lobe_exp);

        // Through the exponent u = -(1 + l.mu)/sigma^2.
        let coeff = (d_out.r * v.c.r + d_out.g * v.c.g + d_out.b * v.c.b) * w * s.lobe_exp;
        let sigma2 = v.sigma * v.sigma;
        va.mu += l * (-coeff / sigma2);
        va.sigma += coeff * 2.0 * (1.0 + l.dot(v.mu)) / (sigma2 * v.sigma);

        r_next = s.g * s.alpha + r_next * (1.0 - s.alpha);
    }

    sky_radiance_backward(&lf.sky, l, d_out * tau_final, adj);
}

/// Adjoints of `HybridLightField::transmittance` w.r.t. the alpha channel.
/// Uses prefix/suffix products, exact even at alpha = 1.
pub fn transmittance_backward(
    lf: &HybridLightField,
    x: Vec3,
    l: Vec3,
    d_tau: f64,
    adj: &mut AdjointBuffer,
    ws: &mut Workspace,
) {
    let (bb_min, bb_max) = lf.grid.mapping.world_box();
    let Some((t0, t1)) = ray_box_span(bb_min, bb_max, x, l) else {
        return;
    };
    let k_count = lf.samples_per_ray;
    let dt = (t1 - t0) / k_count as f64;
    ws.samples.clear();
    let mut tau = 1.0f64;
    for k in 0..k_count {
        let t = t0 + (k as f64 + 0.5) * dt;
        let p = x + l * t;
        if let Some((ix, iy, iz)) = lf.grid.world_to_voxel(p) {
            let idx = lf.grid.flat_index(ix, iy, iz);
            let v = &lf.grid.voxels[idx];
            ws.samples.push(SampleSlot {
                voxel: idx,
                t,
                alpha: v.alpha,
                lobe_exp: 0.0,
                g: Rgb::BLACK,
                tau_before: tau,
            });
            tau *= 1.0 - v.alpha;
        }
    }
    // Suffix products of (1 - alpha).
    let mut suffix = 1.0f64;
    for s in ws.samples.iter().rev() {
        adj.voxels[s.voxel].alpha += -d_tau * s.tau_before * suffix;
        suffix *= 1.0 - s.alpha;
    }
}

/// Adjoints of the alpha-composited expected depth along a camera ray
/// (`volume::render_depth`) w.r.t. the alpha channel.
pub fn depth_ray_backward(
    grid: &VsgGrid,
    origin: Vec3,
    dir: Vec3,
    samples_per_ray: usize,
    d_depth: f64,
    adj: &mut AdjointBuffer,
    ws: &mut Workspace,
) {
    let (bb_min, bb_max) = grid.mapping.world_box();
    let Some((t0, t1)) = ray_box_span(bb_min, bb_max, origin, dir) else {
        return;
    };
    let k_count = samples_per_ray.max(1);
    let dt = (t1 - t0) / k_count as f64;
    ws.samples.clear();
    let mut tau = 1.0f64;
    for k in 0..k_count {
        let t = t0 + (k as f64 + 0.5) * dt;
        let p = origin + dir * t;
        if let Some((ix, iy, iz)) = grid.world_to_voxel(p) {
            let idx = grid.flat_index(ix, iy, iz);
            let v = &grid.voxels[idx];
            ws.samples.push(SampleSlot {
                voxel: idx,
                t,
                alpha: v.alpha,
                lobe_exp: 0.0,
                g: Rgb::BLACK,
                tau_before: tau,
            });
            tau *= 1.0 - v.alpha;
        }
    }
    let mut r_next = t1; // depth contribution behind the last sample
    for s in ws.samples.iter().rev() {
        adj.voxels[s.voxel].alpha += d_depth * s.tau_before * (s.t - r_next);
        r_next = s.alpha * s.t + (1.0 - s.alpha) * r_next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::sky::SkyDome;
    use crate::volume::{LogProjection, VsgGrid, VsgVoxel};

    fn mapping() -> LogProjection {
        LogProjection {
            half_extent_xy: 10.0,
            z_range: (-10.0, 10.0),
            curvature: 3.0,
            origin: Vec3::ZERO,
        }
    }

    fn one_voxel_field(alpha: f64) -> HybridLightField {
        let sky = SkyDome::new(
            Vec3::Z,
            Rgb::new(0.8, 0.6, 0.4),
            Image::filled(8, 4, Rgb::gray(0.3)),
            4.0,
        )
        .unwrap();
        let mut grid = VsgGrid::empty((1, 1, 1), mapping()).unwrap();
        grid.voxels[0] = VsgVoxel {
            c: Rgb::new(0.5, 0.7, 0.9),
            mu: Vec3::new(0.0, 0.6, 0.8).normalized(),
            sigma: 0.7,
            alpha,
        };
        HybridLightField::new(sky, grid, 1)
    }

    /// One voxel, one sample: L_c = a c_c e + (1-a) env_c with
    /// e = exp(-(1 + l.mu)/s^2). Closed-form partials.
    #[test]
    fn single_voxel_single_sample_closed_form() {
        let lf = one_voxel_field(0.6);
        let l = Vec3::new(0.3, -0.2, 0.93).normalized();
        let v = lf.grid.voxels[0];
        let env = lf.sky.radiance(l);
        let e = (-(1.0 + l.dot(v.mu)) / (v.sigma * v.sigma)).exp();

        let mut adj = AdjointBuffer::zeros_like(&lf);
        let mut ws = Workspace::default();
        let d_out = Rgb::new(1.0, 0.0, 0.0); // probe the red channel
        radiance_backward(&lf, Vec3::ZERO, l, d_out, &mut adj, &mut ws);

        let g_r = v.c.r * e;
        let expect_alpha = g_r - env.r;
        assert!((adj.voxels[0].alpha - expect_alpha).abs() < 1e-12);
        assert!((adj.voxels[0].c.r - v.alpha * e).abs() < 1e-12);
        assert_eq!(adj.voxels[0].c.g, 0.0);
        let coeff = v.alpha * v.c.r * e;
        let expect_sigma = coeff * 2.0 * (1.0 + l.dot(v.mu)) / (v.sigma * v.sigma * v.sigma);
        assert!((adj.voxels[0].sigma - expect_sigma).abs() < 1e-12);
        let expect_mu = l * (-coeff / (v.sigma * v.sigma));
        assert!((adj.voxels[0].mu - expect_mu).norm() < 1e-12);
    }

    #[test]
    fn zero_upstream_gradient_is_zero_adjoint() {
        let lf = one_voxel_field(0.4);
        let mut adj = AdjointBuffer::zeros_like(&lf);
        let mut ws = Workspace::default();
        radiance_backward(&lf, Vec3::ZERO, Vec3::Z, Rgb::BLACK, &mut adj, &mut ws);
        assert!(adj.max_abs() == 0.0);
    }

    #[test]
    fn sky_bilinear_adjoint_is_tap_weights() {
        let sky = SkyDome::new(Vec3::Z, Rgb::BLACK, Image::filled(8, 4, Rgb::gray(0.2)), 100.0)
            .unwrap();
        let lf = HybridLightField::sky_only(sky);
        let l = Vec3::new(0.4, 0.5, 0.3).normalized();
        let mut adj = AdjointBuffer::zeros_like(&lf);
        let mut ws = Workspace::default();
        radiance_backward(&lf, Vec3::ZERO, l, Rgb::new(2.0, 0.0, 0.0), &mut adj, &mut ws);
        let (px, py) = equirect_dir_to_px(l, 8, 4);
        let (taps, w) = bilinear_taps_wrap_x(8, 4, px, py);
        for i in 0..4 {
            let got = adj.background.get(taps[i].0, taps[i].1).r;
            assert!((got - 2.0 * w[i]).abs() < 1e-12, "tap {i}: {got} vs {}", w[i]);
        }
        let total: f64 = adj.background.pixels().iter().map(|c| c.r).sum();
        assert!((total - 2.0).abs() < 1e-12);
    }

    #[test]
    fn radiance_adjoints_match_fd_on_random_field() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let sky = SkyDome::new(
            Vec3::new(0.2, 0.3, 0.93).normalized(),
            Rgb::new(1.5, 1.2, 0.9),
            Image::from_fn(8, 4, |_, _| {
                Rgb::new(rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0))
            }),
            4.0,
        )
        .unwrap();
        let mut grid = VsgGrid::empty((2, 2, 2), mapping()).unwrap();
        for v in &mut grid.voxels {
            *v = VsgVoxel {
                c: Rgb::new(rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0)),
                mu: Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
                .normalized_or(Vec3::Z),
                sigma: rng.gen_range(0.4..1.5),
                alpha: rng.gen_range(0.2..0.8),
            };
        }
        let lf = HybridLightField::new(sky, grid, 8);
        let x = Vec3::new(0.5, -0.3, 0.2);
        let l = Vec3::new(0.3, 0.8, 0.5).normalized();
        let d_out = Rgb::new(0.7, -0.4, 1.1);

        let mut adj = AdjointBuffer::zeros_like(&lf);
        let mut ws = Workspace::default();
        radiance_backward(&lf, x, l, d_out, &mut adj, &mut ws);

        let f = |lf: &HybridLightField| {
            let v = lf.radiance(x, l);
            v.r * d_out.r + v.g * d_out.g + v.b * d_out.b
        };
        let h = 1e-5;
        // Probe every voxel channel.
        for i in 0..lf.grid.voxel_count() {
            for ch in 0..8 {
                let mut plus = lf.clone();
                let mut minus = lf.clone();
                {
                    let (vp, vm) = (&mut plus.grid.voxels[i], &mut minus.grid.voxels[i]);
                    match ch {
                        0 => { vp.c.r += h; vm.c.r -= h; }
                        1 => { vp.c.g += h; vm.c.g -= h; }
                        2 => { vp.c.b += h; vm.c.b -= h; }
                        3 => { vp.mu.x += h; vm.mu.x -= h; }
                        4 => { vp.mu.y += h; vm.mu.y -= h; }
                        5 => { vp.mu.z += h; vm.mu.z -= h; }
                        6 => { vp.sigma += h; vm.sigma -= h; }
                        _ => { vp.alpha += h; vm.alpha -= h; }
                    }
                }
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                let va = &adj.voxels[i];
                let an = match ch {
                    0 => va.c.r,
                    1 => va.c.g,
                    2 => va.c.b,
                    3 => va.mu.x,
                    4 => va.mu.y,
                    5 => va.mu.z,
                    6 => va.sigma,
                    _ => va.alpha,
                };
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-10);
                assert!(err < 1e-6, "voxel {i} ch {ch}: fd {fd} vs an {an}");
            }
        }
    }

    #[test]
    fn transmittance_adjoint_handles_alpha_one() {
        let lf = one_voxel_field(1.0);
        let mut adj = AdjointBuffer::zeros_like(&lf);
        let mut ws = Workspace::default();
        transmittance_backward(&lf, Vec3::ZERO, Vec3::Z, 1.0, &mut adj, &mut ws);
        // tau = (1-a); d tau/d a = -1 for a single sample, finite at a = 1.
        assert!((adj.voxels[0].alpha - (-1.0)).abs() < 1e-12);
    }
}
