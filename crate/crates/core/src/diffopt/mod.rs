//! Reverse-mode adjoints through the insertion pipeline, loss library,
//! finite-difference verification, and the inverse-lighting fitter.

mod adjoint;
mod fit;
mod gradcheck;
mod losses;
mod record;

pub use adjoint::{
    depth_ray_backward, radiance_backward, sky_radiance_backward, transmittance_backward,
    Workspace,
};
pub use fit::{
    canonicalized, fit, FitConfig, FitOutcome, InsertionObservation, LossWeights, Observation,
    OptimizeFlags, PeakProbe, RawParams, TraceRow,
};
pub use gradcheck::{grad_check, tiny_scene, GradCheckReport, TinyScene};
pub use losses::{
    loss_alpha_reg, loss_depth_recon, loss_insertion_recon, loss_radiance_recon,
    loss_sky_separation,
};
pub use record::{insertion_backward, OutputGrads};

use crate::image::{Image, RgbImage};
use crate::lightfield::HybridLightField;
use crate::math::{Rgb, Vec3};

/// Gradients for one voxel's (c, mu, sigma, alpha).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VoxelAdjoint {
    pub c: Rgb,
    pub mu: Vec3,
    pub sigma: f64,
    pub alpha: f64,
}

/// Accumulated gradients of a scalar loss w.r.t. every lighting parameter.
/// Shapes mirror the light field exactly.
#[derive(Clone, Debug)]
pub struct AdjointBuffer {
    pub voxels: Vec<VoxelAdjoint>,
    pub peak_intensity: Rgb,
    /// Raw accumulation; call [`AdjointBuffer::project_peak_dir`] to project
    /// onto the tangent plane of the unit sphere at the current direction.
    pub peak_dir: Vec3,
    pub background: RgbImage,
}

impl AdjointBuffer {
    pub fn zeros_like(lf: &HybridLightField) -> AdjointBuffer {
        AdjointBuffer {
            voxels: vec![VoxelAdjoint::default(); lf.grid.voxel_count()],
            peak_intensity: Rgb::BLACK,
            peak_dir: Vec3::ZERO,
            background: Image::filled(
                lf.sky.background.width(),
                lf.sky.background.height(),
                Rgb::BLACK,
            ),
        }
    }

    /// Sum another buffer into this one (fixed reduction order is the
    /// caller's responsibility).
    pub fn merge(&mut self, other: &AdjointBuffer) {
        assert_eq!(self.voxels.len(), other.voxels.len(), "adjoint shape mismatch");
        assert!(
            self.background.same_size(&other.background),
            "adjoint background shape mismatch"
        );
        for (a, b) in self.voxels.iter_mut().zip(&other.voxels) {
            a.c += b.c;
            a.mu += b.mu;
            a.sigma += b.sigma;
            a.alpha += b.alpha;
        }
        self.peak_intensity += other.peak_intensity;
        self.peak_dir += other.peak_dir;
        for (a, b) in self.background.pixels_mut().iter_mut().zip(other.background.pixels()) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.voxels {
            v.c = v.c * s;
            v.mu = v.mu * s;
            v.sigma *= s;
            v.alpha *= s;
        }
        self.peak_intensity = self.peak_intensity * s;
        self.peak_dir = self.peak_dir * s;
        for p in self.background.pixels_mut() {
            *p = *p * s;
        }
    }

    /// Remove the radial component of the peak-direction gradient.
    pub fn project_peak_dir(&mut self, peak_dir: Vec3) {
        self.peak_dir = self.peak_dir.reject_from_unit(peak_dir);
    }

    pub fn is_finite(&self) -> bool {
        self.voxels
            .iter()
            .all(|v| v.c.is_finite() && v.mu.is_finite() && v.sigma.is_finite() && v.alpha.is_finite())
            && self.peak_intensity.is_finite()
            && self.peak_dir.is_finite()
            && self.background.pixels().iter().all(|p| p.is_finite())
    }

    /// Largest absolute entry; 0 for an all-zero buffer.
    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for v in &self.voxels {
            m = m
                .max(v.c.r.abs())
                .max(v.c.g.abs())
                .max(v.c.b.abs())
                .max(v.mu.x.abs())
                .max(v.mu.y.abs())
                .max(v.mu.z.abs())
                .max(v.sigma.abs())
                .max(v.alpha.abs());
        }
        m = m
            .max(self.peak_intensity.r.abs())
            .max(self.peak_intensity.g.abs())
            .max(self.peak_intensity.b.abs())
            .max(self.peak_dir.norm());
        for p in self.background.pixels() {
            m = m.max(p.r.abs()).max(p.g.abs()).max(p.b.abs());
        }
        m
    }
}
