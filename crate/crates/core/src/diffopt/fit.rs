//! Inverse-lighting fitter: projected Adam on squashed (unconstrained)
//! lighting parameters.
//!
//! Radiances live through softplus, opacity through a logistic, lobe axes
//! and the peak direction through normalization, so no gradient step can
//! leave the valid set. An optional sharpness continuation starts the sun
//! lobe broad and narrows it geometrically to the target, which keeps
//! direction gradients alive far from the optimum.

use super::losses::{
    loss_alpha_reg, loss_depth_recon, loss_insertion_recon, loss_radiance_recon,
    loss_sky_separation,
};
use super::AdjointBuffer;
use crate::error::{Error, Result};
use crate::geometry::PinholeCamera;
use crate::image::{Image, RgbImage, ScalarImage};
use crate::insertion::{fibonacci_hemisphere, InsertionRecord, InsertionScene};
use crate::lightfield::HybridLightField;
use crate::math::{logit, sigmoid, softplus, softplus_inv, Rgb, Vec3};
use crate::sky::SkyDome;
use crate::volume::{LogProjection, VsgGrid, VsgVoxel, MIN_SIGMA};
use serde::{Deserialize, Serialize};

/// One observation for the direct losses: a camera plus any of HDR radiance,
/// depth and sky-mask targets.
pub struct Observation {
    pub camera: PinholeCamera,
    pub radiance: Option<RgbImage>,
    pub depth: Option<ScalarImage>,
    pub sky_mask: Option<ScalarImage>,
}

/// An insertion-render observation: a prebuilt record (fixed ray set) plus
/// target foreground and ratio-shadow buffers.
pub struct InsertionObservation {
    pub scene: InsertionScene,
    pub record: InsertionRecord,
    pub target_foreground: RgbImage,
    pub target_shadow: RgbImage,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub recon: f64,
    pub transmit: f64,
    pub reg: f64,
    pub depth: f64,
    pub insertion_fg: f64,
    pub insertion_shadow: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            recon: 1.0,
            transmit: 1.0,
            reg: 1e-4,
            depth: 1.0,
            insertion_fg: 1.0,
            insertion_shadow: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeFlags {
    pub voxels: bool,
    pub sky_peak: bool,
    pub background: bool,
}

impl Default for OptimizeFlags {
    fn default() -> Self {
        OptimizeFlags { voxels: true, sky_peak: true, background: true }
    }
}

/// Coarse initialization probe for the sun direction: the configured loss is
/// evaluated over a Fibonacci lattice of candidate peak directions (times a
/// few intensity scales) at a moderate lobe sharpness, and descent starts
/// from the best candidate. The landscape over the peak direction is
/// multimodal (a sharp lobe has no gradient support far from its axis), so
/// plain descent from an arbitrary direction can stall; the probe is the
/// deterministic counterpart of the learned initialization the full system
/// would provide.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakProbe {
    pub candidates: usize,
    pub sharpness: f64,
}

impl Default for PeakProbe {
    fn default() -> Self {
        PeakProbe { candidates: 64, sharpness: 15.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub weights: LossWeights,
    pub optimize: OptimizeFlags,
    /// Sharpness continuation: start value and the iteration count of the
    /// geometric ramp up to the light field's own sharpness.
    pub anneal_sharpness_from: Option<f64>,
    pub anneal_iterations: usize,
    /// Optional coarse peak-direction probe before descent.
    pub probe_peak: Option<PeakProbe>,
    /// Parallel gradient bands (fixed reduction order).
    pub bands: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            step_size: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            iterations: 500,
            weights: LossWeights::default(),
            optimize: OptimizeFlags::default(),
            anneal_sharpness_from: None,
            anneal_iterations: 0,
            probe_peak: None,
            bands: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TraceRow {
    pub iteration: usize,
    pub recon: f64,
    pub transmit: f64,
    pub reg: f64,
    pub depth: f64,
    pub insertion_fg: f64,
    pub insertion_shadow: f64,
    pub total: f64,
}

pub struct FitOutcome {
    pub lf: HybridLightField,
    pub trace: Vec<TraceRow>,
}

/// Unconstrained parameter vector mirroring a light field. Layout:
/// 8 values per voxel (c rgb, mu xyz, sigma, alpha), then peak intensity,
/// peak direction, then 3 per background texel.
#[derive(Clone)]
pub struct RawParams {
    dims: (usize, usize, usize),
    mapping: LogProjection,
    bg_w: usize,
    bg_h: usize,
    samples_per_ray: usize,
    pub sharpness: f64,
    pub data: Vec<f64>,
}

const VOXEL_STRIDE: usize = 8;

impl RawParams {
    pub fn from_light_field(lf: &HybridLightField) -> RawParams {
        let dims = lf.grid.dims();
        let bg_w = lf.sky.background.width();
        let bg_h = lf.sky.background.height();
        let n_vox = lf.grid.voxel_count();
        let mut data = Vec::with_capacity(n_vox * VOXEL_STRIDE + 6 + bg_w * bg_h * 3);
        for v in &lf.grid.voxels {
            data.push(softplus_inv(v.c.r.max(1e-8)));
            data.push(softplus_inv(v.c.g.max(1e-8)));
            data.push(softplus_inv(v.c.b.max(1e-8)));
            data.push(v.mu.x);
            data.push(v.mu.y);
            data.push(v.mu.z);
            data.push(softplus_inv((v.sigma - MIN_SIGMA).max(1e-8)));
            data.push(logit(v.alpha.clamp(1e-6, 1.0 - 1e-6)));
        }
        data.push(softplus_inv(lf.sky.peak_intensity.r.max(1e-8)));
        data.push(softplus_inv(lf.sky.peak_intensity.g.max(1e-8)));
        data.push(softplus_inv(lf.sky.peak_intensity.b.max(1e-8)));
        data.push(lf.sky.peak_dir.x);
        data.push(lf.sky.peak_dir.y);
        data.push(lf.sky.peak_dir.z);
        for p in lf.sky.background.pixels() {
            data.push(softplus_inv(p.r.max(1e-8)));
            data.push(softplus_inv(p.g.max(1e-8)));
            data.push(softplus_inv(p.b.max(1e-8)));
        }
        RawParams {
            dims,
            mapping: lf.grid.mapping,
            bg_w,
            bg_h,
            samples_per_ray: lf.samples_per_ray,
            sharpness: lf.sky.sharpness,
            data,
        }
    }

    fn peak_offset(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2 * VOXEL_STRIDE
    }

    pub fn peak_intensity(&self) -> Rgb {
        let p = self.peak_offset();
        Rgb::new(
            softplus(self.data[p]),
            softplus(self.data[p + 1]),
            softplus(self.data[p + 2]),
        )
    }

    pub fn set_peak(&mut self, dir: Vec3, intensity: Rgb) {
        let p = self.peak_offset();
        self.data[p] = softplus_inv(intensity.r.max(1e-8));
        self.data[p + 1] = softplus_inv(intensity.g.max(1e-8));
        self.data[p + 2] = softplus_inv(intensity.b.max(1e-8));
        self.data[p + 3] = dir.x;
        self.data[p + 4] = dir.y;
        self.data[p + 5] = dir.z;
    }

    fn bg_offset(&self) -> usize {
        self.peak_offset() + 6
    }

    pub fn to_light_field(&self) -> HybridLightField {
        let n_vox = self.dims.0 * self.dims.1 * self.dims.2;
        let mut voxels = Vec::with_capacity(n_vox);
        for i in 0..n_vox {
            let s = &self.data[i * VOXEL_STRIDE..(i + 1) * VOXEL_STRIDE];
            voxels.push(VsgVoxel {
                c: Rgb::new(softplus(s[0]), softplus(s[1]), softplus(s[2])),
                mu: Vec3::new(s[3], s[4], s[5]).normalized_or(Vec3::Z),
                sigma: MIN_SIGMA + softplus(s[6]),
                alpha: sigmoid(s[7]),
            });
        }
        let grid = VsgGrid::from_voxels(self.dims, voxels, self.mapping).expect("shape fixed");
        let p = self.peak_offset();
        let sky = SkyDome {
            peak_intensity: Rgb::new(
                softplus(self.data[p]),
                softplus(self.data[p + 1]),
                softplus(self.data[p + 2]),
            ),
            peak_dir: Vec3::new(self.data[p + 3], self.data[p + 4], self.data[p + 5])
                .normalized_or(Vec3::Z),
            background: Image::from_fn(self.bg_w, self.bg_h, |x, y| {
                let o = self.bg_offset() + (y * self.bg_w + x) * 3;
                Rgb::new(
                    softplus(self.data[o]),
                    softplus(self.data[o + 1]),
                    softplus(self.data[o + 2]),
                )
            }),
            sharpness: self.sharpness,
        };
        HybridLightField::new(sky, grid, self.samples_per_ray)
    }

    /// Chain adjoints (w.r.t. direct lighting parameters) through the
    /// squashings onto the raw vector. Frozen groups get zero gradient.
    pub fn grad_from_adjoint(&self, adj: &AdjointBuffer, flags: &OptimizeFlags) -> Vec<f64> {
        let mut g = vec![0.0; self.data.len()];
        if flags.voxels {
            for (i, va) in adj.voxels.iter().enumerate() {
                let s = &self.data[i * VOXEL_STRIDE..(i + 1) * VOXEL_STRIDE];
                let o = i * VOXEL_STRIDE;
                g[o] = va.c.r * sigmoid(s[0]);
                g[o + 1] = va.c.g * sigmoid(s[1]);
                g[o + 2] = va.c.b * sigmoid(s[2]);
                let d_mu = normalize_pullback(Vec3::new(s[3], s[4], s[5]), va.mu);
                g[o + 3] = d_mu.x;
                g[o + 4] = d_mu.y;
                g[o + 5] = d_mu.z;
                g[o + 6] = va.sigma * sigmoid(s[6]);
                let sa = sigmoid(s[7]);
                g[o + 7] = va.alpha * sa * (1.0 - sa);
            }
        }
        let p = self.peak_offset();
        if flags.sky_peak {
            g[p] = adj.peak_intensity.r * sigmoid(self.data[p]);
            g[p + 1] = adj.peak_intensity.g * sigmoid(self.data[p + 1]);
            g[p + 2] = adj.peak_intensity.b * sigmoid(self.data[p + 2]);
            let d_dir = normalize_pullback(
                Vec3::new(self.data[p + 3], self.data[p + 4], self.data[p + 5]),
                adj.peak_dir,
            );
            g[p + 3] = d_dir.x;
            g[p + 4] = d_dir.y;
            g[p + 5] = d_dir.z;
        }
        if flags.background {
            let b = self.bg_offset();
            for (i, t) in adj.background.pixels().iter().enumerate() {
                g[b + i * 3] = t.r * sigmoid(self.data[b + i * 3]);
                g[b + i * 3 + 1] = t.g * sigmoid(self.data[b + i * 3 + 1]);
                g[b + i * 3 + 2] = t.b * sigmoid(self.data[b + i * 3 + 2]);
            }
        }
        g
    }
}

/// The light field as the fitter sees it: passed through the squashed
/// parameterization once. Observations rendered from the canonicalized field
/// make a ground-truth initialization an exact fixed point of [`fit`]
/// (bit-zero residual, hence bit-zero gradient and no Adam drift).
pub fn canonicalized(lf: &HybridLightField) -> HybridLightField {
    RawParams::from_light_field(lf).to_light_field()
}

/// Pullback of v = m/|m|: J^T g = (g - v (v.g)) / |m|.
fn normalize_pullback(m: Vec3, g: Vec3) -> Vec3 {
    let n = m.norm();
    if n < 1e-12 {
        return Vec3::ZERO;
    }
    let v = m / n;
    (g - v * v.dot(g)) / n
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl Adam {
    fn new(n: usize) -> Adam {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &FitConfig) {
        self.t += 1;
        let b1t = 1.0 - cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= cfg.step_size * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

fn check_finite(term: &str, iteration: usize, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical(format!(
            "loss term '{term}' is not finite ({value}) at iteration {iteration}"
        )))
    }
}

/// One evaluation of every active loss with its gradients.
fn evaluate_losses(
    lf: &HybridLightField,
    iteration: usize,
    observations: &[Observation],
    insertions: &[InsertionObservation],
    cfg: &FitConfig,
) -> Result<(TraceRow, AdjointBuffer)> {
    let w = cfg.weights;
    let mut row = TraceRow { iteration, ..Default::default() };
    let mut total_adj = AdjointBuffer::zeros_like(lf);

    for obs in observations {
        if w.recon > 0.0 {
            if let Some(target) = &obs.radiance {
                let (l, mut a) = loss_radiance_recon(lf, &obs.camera, target, cfg.bands)?;
                row.recon += l;
                a.scale(w.recon);
                total_adj.merge(&a);
            }
        }
        if w.transmit > 0.0 {
            if let Some(mask) = &obs.sky_mask {
                let (l, mut a) = loss_sky_separation(lf, &obs.camera, mask, cfg.bands)?;
                row.transmit += l;
                a.scale(w.transmit);
                total_adj.merge(&a);
            }
        }
        if w.depth > 0.0 {
            if let Some(target) = &obs.depth {
                let (l, mut a) = loss_depth_recon(lf, &obs.camera, target, cfg.bands)?;
                row.depth += l;
                a.scale(w.depth);
                total_adj.merge(&a);
            }
        }
    }
    if w.reg > 0.0 {
        let (l, mut a) = loss_alpha_reg(lf);
        row.reg = l;
        a.scale(w.reg);
        total_adj.merge(&a);
    }
    if w.insertion_fg > 0.0 || w.insertion_shadow > 0.0 {
        for ins in insertions {
            let (fg_l, sh_l, a) = loss_insertion_recon(
                &ins.record,
                &ins.scene,
                lf,
                &ins.target_foreground,
                &ins.target_shadow,
                w.insertion_fg,
                w.insertion_shadow,
                cfg.bands,
            )?;
            row.insertion_fg += fg_l;
            row.insertion_shadow += sh_l;
            total_adj.merge(&a);
        }
    }

    check_finite("recon", iteration, row.recon)?;
    check_finite("transmit", iteration, row.transmit)?;
    check_finite("reg", iteration, row.reg)?;
    check_finite("depth", iteration, row.depth)?;
    check_finite("insertion_fg", iteration, row.insertion_fg)?;
    check_finite("insertion_shadow", iteration, row.insertion_shadow)?;
    row.total = w.recon * row.recon
        + w.transmit * row.transmit
        + w.reg * row.reg
        + w.depth * row.depth
        + w.insertion_fg * row.insertion_fg
        + w.insertion_shadow * row.insertion_shadow;
    check_finite("total", iteration, row.total)?;
    if !total_adj.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite gradient at iteration {iteration}"
        )));
    }
    Ok((row, total_adj))
}

/// Gradient-descend all lighting parameters against the observations.
pub fn fit(
    init: &HybridLightField,
    observations: &[Observation],
    insertions: &[InsertionObservation],
    cfg: &FitConfig,
) -> Result<FitOutcome> {
    if observations.is_empty() && insertions.is_empty() {
        return Err(Error::invalid("fit needs at least one observation"));
    }
    let mut raw = RawParams::from_light_field(init);
    let target_sharpness = init.sky.sharpness;

    if let Some(probe) = cfg.probe_peak {
        if cfg.optimize.sky_peak && probe.candidates > 0 {
            let base_intensity = raw.peak_intensity();
            let mut best_loss;
            {
                let mut start = raw.clone();
                start.sharpness = probe.sharpness;
                let (row, _) =
                    evaluate_losses(&start.to_light_field(), 0, observations, insertions, cfg)?;
                best_loss = row.total;
            }
            for dir in fibonacci_hemisphere(probe.candidates, Vec3::Z) {
                for scale in [0.25, 1.0, 4.0] {
                    let mut candidate = raw.clone();
                    candidate.set_peak(dir, base_intensity * scale);
                    candidate.sharpness = probe.sharpness;
                    let (row, _) = evaluate_losses(
                        &candidate.to_light_field(),
                        0,
                        observations,
                        insertions,
                        cfg,
                    )?;
                    if row.total < best_loss {
                        best_loss = row.total;
                        raw.set_peak(dir, base_intensity * scale);
                    }
                }
            }
        }
    }

    let mut adam = Adam::new(raw.data.len());
    let mut trace = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        raw.sharpness = match cfg.anneal_sharpness_from {
            Some(start) if cfg.anneal_iterations > 0 => {
                let f = (iteration as f64 / cfg.anneal_iterations as f64).min(1.0);
                start * (target_sharpness / start).powf(f)
            }
            _ => target_sharpness,
        };
        let lf = raw.to_light_field();
        let (row, total_adj) = evaluate_losses(&lf, iteration, observations, insertions, cfg)?;
        let grad = raw.grad_from_adjoint(&total_adj, &cfg.optimize);
        adam.step(&mut raw.data, &grad, cfg);
        trace.push(row);
    }

    raw.sharpness = target_sharpness;
    let lf = raw.to_light_field();
    debug_assert!(lf.grid.all_satisfy_invariants());
    Ok(FitOutcome { lf, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_lf() -> HybridLightField {
        let sky = SkyDome::new(
            Vec3::new(0.3, 0.2, 0.93).normalized(),
            Rgb::new(2.0, 1.5, 1.0),
            Image::filled(8, 4, Rgb::gray(0.4)),
            4.0,
        )
        .unwrap();
        let mapping = LogProjection {
            half_extent_xy: 10.0,
            z_range: (-2.0, 6.0),
            curvature: 3.0,
            origin: Vec3::new(0.0, 0.0, 1.5),
        };
        let mut grid = VsgGrid::empty((2, 2, 2), mapping).unwrap();
        for (i, v) in grid.voxels.iter_mut().enumerate() {
            v.alpha = 0.1 + 0.08 * i as f64;
            v.c = Rgb::new(0.2, 0.3, 0.4);
            v.sigma = 0.8;
        }
        HybridLightField::new(sky, grid, 8)
    }

    #[test]
    fn raw_roundtrip_preserves_parameters() {
        let lf = small_lf();
        let raw = RawParams::from_light_field(&lf);
        let back = raw.to_light_field();
        for (a, b) in lf.grid.voxels.iter().zip(&back.grid.voxels) {
            assert!((a.alpha - b.alpha).abs() < 1e-9);
            assert!((a.sigma - b.sigma).abs() < 1e-9);
            assert!((a.c.r - b.c.r).abs() < 1e-9);
            assert!((a.mu - b.mu).norm() < 1e-9);
        }
        assert!((lf.sky.peak_dir - back.sky.peak_dir).norm() < 1e-12);
        assert!((lf.sky.peak_intensity.r - back.sky.peak_intensity.r).abs() < 1e-9);
        for (a, b) in lf.sky.background.pixels().iter().zip(back.sky.background.pixels()) {
            assert!((a.r - b.r).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_weights_is_identity() {
        let lf = small_lf();
        let cam = PinholeCamera::new(
            4.0,
            4.0,
            2.0,
            2.0,
            4,
            4,
            PinholeCamera::street_pose(1.5),
        )
        .unwrap();
        let obs = Observation {
            camera: cam,
            radiance: Some(Image::filled(4, 4, Rgb::gray(0.5))),
            depth: None,
            sky_mask: None,
        };
        let cfg = FitConfig {
            iterations: 5,
            weights: LossWeights {
                recon: 0.0,
                transmit: 0.0,
                reg: 0.0,
                depth: 0.0,
                insertion_fg: 0.0,
                insertion_shadow: 0.0,
            },
            bands: 2,
            ..Default::default()
        };
        let out = fit(&lf, &[obs], &[], &cfg).unwrap();
        for (a, b) in lf.grid.voxels.iter().zip(&out.lf.grid.voxels) {
            assert!((a.alpha - b.alpha).abs() < 1e-9);
            assert!((a.c.g - b.c.g).abs() < 1e-9);
        }
        assert!((lf.sky.peak_dir - out.lf.sky.peak_dir).norm() < 1e-9);
    }

    #[test]
    fn ground_truth_init_is_a_fixed_point() {
        let lf = small_lf();
        let cam = PinholeCamera::new(
            4.0,
            4.0,
            2.0,
            2.0,
            4,
            4,
            PinholeCamera::street_pose(1.5),
        )
        .unwrap();
        // Render the observation from the canonicalized field: the fitter
        // evaluates exactly this, so the gradient is bit-zero at the optimum.
        let canon = canonicalized(&lf);
        let target = Image::from_fn(4, 4, |x, y| {
            let ray = cam.pixel_ray(x as f64 + 0.5, y as f64 + 0.5).unwrap();
            canon.radiance(ray.origin, ray.direction)
        });
        let obs = Observation { camera: cam, radiance: Some(target), depth: None, sky_mask: None };
        let cfg = FitConfig {
            iterations: 3,
            weights: LossWeights {
                recon: 1.0,
                transmit: 0.0,
                reg: 0.0,
                depth: 0.0,
                insertion_fg: 0.0,
                insertion_shadow: 0.0,
            },
            bands: 2,
            ..Default::default()
        };
        let out = fit(&lf, &[obs], &[], &cfg).unwrap();
        assert_eq!(out.trace[0].recon, 0.0);
        assert_eq!(out.trace[2].recon, 0.0);
        for (a, b) in canon.grid.voxels.iter().zip(&out.lf.grid.voxels) {
            assert_eq!(a.alpha, b.alpha);
            assert_eq!(a.c, b.c);
        }
        assert_eq!(canon.sky.peak_dir, out.lf.sky.peak_dir);
        // And within roundtrip tolerance of the original field.
        for (a, b) in lf.grid.voxels.iter().zip(&out.lf.grid.voxels) {
            assert!((a.alpha - b.alpha).abs() < 1e-9);
        }
    }

    #[test]
    fn descent_on_uniform_sky_intensity() {
        // Fit a sky-only field to a brighter target; loss must fall
        // monotonically over the first steps.
        let sky = SkyDome::uniform(Rgb::gray(0.3));
        let lf = HybridLightField::sky_only(sky);
        let cam = PinholeCamera::new(
            4.0,
            4.0,
            2.0,
            2.0,
            4,
            4,
            PinholeCamera::street_pose(1.5),
        )
        .unwrap();
        let obs = Observation {
            camera: cam,
            radiance: Some(Image::filled(4, 4, Rgb::gray(0.8))),
            depth: None,
            sky_mask: None,
        };
        let cfg = FitConfig {
            iterations: 10,
            step_size: 0.05,
            weights: LossWeights {
                recon: 1.0,
                transmit: 0.0,
                reg: 0.0,
                depth: 0.0,
                insertion_fg: 0.0,
                insertion_shadow: 0.0,
            },
            optimize: OptimizeFlags { voxels: false, sky_peak: false, background: true },
            bands: 1,
            ..Default::default()
        };
        let out = fit(&lf, &[obs], &[], &cfg).unwrap();
        for k in 1..out.trace.len() {
            assert!(
                out.trace[k].recon <= out.trace[k - 1].recon + 1e-12,
                "loss rose at step {k}: {} -> {}",
                out.trace[k - 1].recon,
                out.trace[k].recon
            );
        }
    }

    #[test]
    fn uniform_sky_intensity_recovered_from_one_lambertian_pixel() {
        // A Lambertian patch under uniform radiance u renders exactly
        // albedo * u with the cosine estimator, so the scalar least-squares
        // optimum of the foreground loss is u* = target / albedo. Fit must
        // land within 1% of it.
        use crate::brdf::MaterialParams;
        use crate::geometry::mesh::quad;
        use crate::geometry::TriMesh;
        use crate::insertion::{build_record, InsertionConfig, InsertionScene, RayStrategy};

        let albedo = 0.7;
        let u_true = 1.2;
        let cam = PinholeCamera::new(
            6.0,
            6.0,
            3.0,
            3.0,
            6,
            6,
            PinholeCamera::street_pose(1.5),
        )
        .unwrap();
        let mesh = TriMesh::with_material(
            quad(Vec3::new(0.0, 4.0, 1.5), Vec3::X * 3.0, Vec3::Z * 3.0),
            MaterialParams {
                base_color: Rgb::gray(albedo),
                metallic: 0.0,
                roughness: 1.0,
                specular: 0.0,
            },
        )
        .unwrap();
        let scene = InsertionScene::new(
            cam,
            Image::filled(6, 6, Rgb::gray(0.4)),
            Image::filled(6, 6, f64::NAN),
            mesh,
        )
        .unwrap();
        let cfg = InsertionConfig {
            strategy: RayStrategy::CosineDiffuse { rays: 4 },
            self_occlusion: false,
            shadow_rays: 4,
            shadow_width: 2,
            shadow_height: 2,
            ..Default::default()
        };
        let record = build_record(&scene, &cfg);
        assert!(!record.fg_pixels.is_empty());
        let target_foreground = Image::filled(6, 6, Rgb::gray(albedo * u_true));
        let target_shadow = Image::filled(2, 2, Rgb::WHITE);

        let init_sky = SkyDome::uniform(Rgb::gray(0.3));
        let init = HybridLightField::new(
            init_sky,
            VsgGrid::empty((1, 1, 1), LogProjection::default()).unwrap(),
            4,
        );
        let fit_cfg = FitConfig {
            step_size: 0.05,
            iterations: 300,
            weights: LossWeights {
                recon: 0.0,
                transmit: 0.0,
                reg: 0.0,
                depth: 0.0,
                insertion_fg: 1.0,
                insertion_shadow: 0.0,
            },
            optimize: OptimizeFlags { voxels: false, sky_peak: false, background: true },
            bands: 1,
            ..Default::default()
        };
        // Keep an identical scene + record to re-render with the fit result
        // (record building is deterministic).
        let scene2 = InsertionScene::new(
            scene.camera.clone(),
            scene.background.clone(),
            scene.scene_depth.clone(),
            scene.mesh.clone(),
        )
        .unwrap();
        let record2 = build_record(&scene2, &cfg);

        let obs = InsertionObservation { scene, record, target_foreground, target_shadow };
        let out = fit(&init, &[], &[obs], &fit_cfg).unwrap();
        assert!(out.trace.last().unwrap().insertion_fg < out.trace[0].insertion_fg);

        // Every patch pixel renders albedo * u_fit; compare against the
        // closed-form optimum albedo * u_true.
        let fg = crate::insertion::shade_foreground(&record2, &out.lf);
        for px in &record2.fg_pixels {
            let got = fg.get(px.x, px.y).r;
            let want = albedo * u_true;
            assert!(
                (got - want).abs() / want < 0.01,
                "pixel renders {got}, optimum {want}"
            );
        }
    }

    #[test]
    fn alpha_reg_drives_alpha_to_extremes() {
        let (l, adj) = loss_alpha_reg(&small_lf());
        assert!(l > 0.0);
        // At alpha = 0.5 the gradient is zero; below it is positive.
        let lf2 = {
            let mut lf = small_lf();
            for v in &mut lf.grid.voxels {
                v.alpha = 0.5;
            }
            lf
        };
        let (l2, adj2) = loss_alpha_reg(&lf2);
        assert!((l2 - 0.25).abs() < 1e-12);
        for v in &adj2.voxels {
            assert!(v.alpha.abs() < 1e-12);
        }
        let n = adj.voxels.len() as f64;
        // First voxel alpha = 0.1 < 0.5: d/d alpha = (1 - 0.2)/V > 0.
        assert!((adj.voxels[0].alpha - 0.8 / n).abs() < 1e-12);
    }
}
