//! UE4-style simplified Disney BRDF and its importance samplers.
//!
//! f(l, v) = c_diffuse/pi + D*F*G / (4 (n.l)(n.v)) with
//!   c_diffuse = (1-m) c_base
//!   c_specular = (1-m) 0.08 s + m c_base
//!   D = a^2 / (pi ((n.h)^2 (a^2-1) + 1)^2),            a = r^2
//!   G = (n.l)(n.v) / (((n.l)(1-k)+k)((n.v)(1-k)+k)),   k = (r+1)^2/8
//!   F = c_spec + (1-c_spec) 2^((-5.55473 (v.h) - 6.98316)(v.h))

use crate::math::{orthonormal_basis, Rgb, Vec3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Roughness floor keeping the GGX lobe bounded.
pub const MIN_ROUGHNESS: f64 = 0.02;

/// Clamp for the geometric denominator 4 (n.l)(n.v).
const MIN_DENOM: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaterialParams {
    pub base_color: Rgb,
    pub metallic: f64,
    pub roughness: f64,
    pub specular: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams {
            base_color: Rgb::gray(0.8),
            metallic: 0.0,
            roughness: 0.5,
            specular: 0.5,
        }
    }
}

impl MaterialParams {
    pub fn clamped(self) -> MaterialParams {
        MaterialParams {
            base_color: self.base_color.map(|c| c.clamp(0.0, 1.0)),
            metallic: self.metallic.clamp(0.0, 1.0),
            roughness: self.roughness.clamp(0.0, 1.0),
            specular: self.specular.clamp(0.0, 1.0),
        }
    }

    pub fn diffuse_color(&self) -> Rgb {
        self.base_color * (1.0 - self.metallic)
    }

    pub fn specular_color(&self) -> Rgb {
        let dielectric = (1.0 - self.metallic) * 0.08 * self.specular;
        self.base_color * self.metallic + Rgb::gray(dielectric)
    }

    fn eval_roughness(&self) -> f64 {
        self.roughness.max(MIN_ROUGHNESS)
    }
}

/// Diffuse term c_diffuse / pi; independent of directions.
pub fn eval_diffuse(mat: &MaterialParams) -> Rgb {
    mat.diffuse_color() / PI
}

/// GGX normal distribution with a = r^2.
pub fn ggx_d(roughness: f64, n_dot_h: f64) -> f64 {
    let a = roughness * roughness;
    let a2 = a * a;
    let d = (n_dot_h * n_dot_h) * (a2 - 1.0) + 1.0;
    a2 / (PI * d * d)
}

fn smith_g(roughness: f64, n_dot_l: f64, n_dot_v: f64) -> f64 {
    let k = (roughness + 1.0) * (roughness + 1.0) / 8.0;
    (n_dot_l * n_dot_v) / ((n_dot_l * (1.0 - k) + k) * (n_dot_v * (1.0 - k) + k))
}

fn schlick_f(c_spec: Rgb, v_dot_h: f64) -> Rgb {
    let p = 2.0f64.powf((-5.55473 * v_dot_h - 6.98316) * v_dot_h);
    c_spec + (Rgb::WHITE - c_spec) * p
}

/// Specular term D*F*G / (4 (n.l)(n.v)). Zero when the half vector is
/// undefined (l = -v) or either cosine is non-positive.
pub fn eval_specular(mat: &MaterialParams, n: Vec3, l: Vec3, v: Vec3) -> Rgb {
    let n_dot_l = n.dot(l);
    let n_dot_v = n.dot(v);
    if n_dot_l <= 0.0 || n_dot_v <= 0.0 {
        return Rgb::BLACK;
    }
    let h_raw = l + v;
    let h_len = h_raw.norm();
    if h_len < 1e-9 {
        return Rgb::BLACK;
    }
    let h = h_raw / h_len;
    let r = mat.eval_roughness();
    let d = ggx_d(r, n.dot(h));
    let g = smith_g(r, n_dot_l, n_dot_v);
    let f = schlick_f(mat.specular_color(), v.dot(h));
    f * (d * g / (4.0 * n_dot_l * n_dot_v).max(MIN_DENOM))
}

/// Full BRDF value in 1/steradian.
pub fn eval_brdf(mat: &MaterialParams, n: Vec3, l: Vec3, v: Vec3) -> Rgb {
    eval_diffuse(mat) + eval_specular(mat, n, l, v)
}

/// Cosine-weighted hemisphere sample about `n`; pdf = (n.l)/pi.
pub fn sample_diffuse(n: Vec3, rng: &mut impl Rng) -> (Vec3, f64) {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let r = u1.sqrt();
    let phi = 2.0 * PI * u2;
    let x = r * phi.cos();
    let y = r * phi.sin();
    let z = (1.0 - u1).max(0.0).sqrt();
    let (t, b) = orthonormal_basis(n);
    let l = t * x + b * y + n * z;
    (l, z / PI)
}

/// Uniform hemisphere sample about `n`; pdf = 1/(2 pi).
pub fn sample_uniform_hemisphere(n: Vec3, rng: &mut impl Rng) -> (Vec3, f64) {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let z = u1;
    let r = (1.0 - z * z).max(0.0).sqrt();
    let phi = 2.0 * PI * u2;
    let (t, b) = orthonormal_basis(n);
    let l = t * (r * phi.cos()) + b * (r * phi.sin()) + n * z;
    (l, 1.0 / (2.0 * PI))
}

/// Uniform sample over the full sphere; pdf = 1/(4 pi).
pub fn sample_uniform_sphere(rng: &mut impl Rng) -> (Vec3, f64) {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let z = 1.0 - 2.0 * u1;
    let r = (1.0 - z * z).max(0.0).sqrt();
    let phi = 2.0 * PI * u2;
    (Vec3::new(r * phi.cos(), r * phi.sin(), z), 1.0 / (4.0 * PI))
}

/// GGX importance sample: draw a half vector from D, reflect `v`.
/// pdf = D (n.h) / (4 (v.h)). Samples falling below the horizon are retried
/// a bounded number of times; `None` means a zero-weight sample.
pub fn sample_ggx(n: Vec3, v: Vec3, roughness: f64, rng: &mut impl Rng) -> Option<(Vec3, f64)> {
    let r = roughness.max(MIN_ROUGHNESS);
    let a = r * r;
    let a2 = a * a;
    let (t, b) = orthonormal_basis(n);
    for _ in 0..8 {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        let cos_theta = ((1.0 - u1) / (u1 * (a2 - 1.0) + 1.0)).max(0.0).sqrt();
        let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
        let phi = 2.0 * PI * u2;
        let h = t * (sin_theta * phi.cos()) + b * (sin_theta * phi.sin()) + n * cos_theta;
        let v_dot_h = v.dot(h);
        if v_dot_h <= 0.0 {
            continue;
        }
        let l = h * (2.0 * v_dot_h) - v;
        if n.dot(l) <= 0.0 {
            continue;
        }
        let pdf = ggx_d(r, n.dot(h)) * n.dot(h) / (4.0 * v_dot_h).max(MIN_DENOM);
        if pdf > 0.0 {
            return Some((l, pdf));
        }
    }
    None
}
