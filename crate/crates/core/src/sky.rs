//! HDR sky dome at infinity: explicit sun peak over an equirect background,
//! peak encodings, tonemapping, and the sky-side losses.

use crate::error::{Error, Result};
use crate::geometry::{equirect_dir_to_px, equirect_px_to_dir};
use crate::image::{Image, RgbImage, ScalarImage};
use crate::math::{Rgb, Vec3};
use serde::{Deserialize, Serialize};

/// Default sharpness of the sun lobe; also the constant in the peak
/// direction encoding.
pub const DEFAULT_SHARPNESS: f64 = 100.0;

/// Peak pixels are those with direction encoding >= this threshold.
pub const PEAK_ENCODING_THRESHOLD: f64 = 0.98;

pub const DEFAULT_BACKGROUND_WIDTH: usize = 256;
pub const DEFAULT_BACKGROUND_HEIGHT: usize = 64;

/// Sky dome: peak direction + HDR peak intensity + equirect background
/// radiance. The radiance query adds a spherical-Gaussian sun lobe of the
/// given sharpness on top of the bilinearly sampled background.
#[derive(Clone, Debug)]
pub struct SkyDome {
    pub peak_dir: Vec3,
    pub peak_intensity: Rgb,
    pub background: RgbImage,
    pub sharpness: f64,
}

impl SkyDome {
    pub fn new(peak_dir: Vec3, peak_intensity: Rgb, background: RgbImage, sharpness: f64) -> Result<Self> {
        if (peak_dir.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("peak_dir must be unit length"));
        }
        if !(peak_intensity.is_finite() && peak_intensity.is_non_negative()) {
            return Err(Error::invalid("peak_intensity must be finite and non-negative"));
        }
        if !(sharpness > 0.0) {
            return Err(Error::invalid("sharpness must be positive"));
        }
        for p in background.pixels() {
            if !(p.is_finite() && p.is_non_negative()) {
                return Err(Error::invalid("background radiance must be finite and non-negative"));
            }
        }
        Ok(SkyDome { peak_dir, peak_intensity, background, sharpness })
    }

    /// Constant-background sky with no peak.
    pub fn uniform(radiance: Rgb) -> SkyDome {
        SkyDome {
            peak_dir: Vec3::Z,
            peak_intensity: Rgb::BLACK,
            background: Image::filled(DEFAULT_BACKGROUND_WIDTH, DEFAULT_BACKGROUND_HEIGHT, radiance),
            sharpness: DEFAULT_SHARPNESS,
        }
    }

    /// Radiance arriving from direction `l` (unit).
    pub fn radiance(&self, l: Vec3) -> Rgb {
        let (px, py) = equirect_dir_to_px(l, self.background.width(), self.background.height());
        let bg = self.background.bilinear_wrap_x(px, py);
        let peak = self.peak_intensity * (self.sharpness * (l.dot(self.peak_dir) - 1.0)).exp();
        bg + peak
    }
}

/// Per-pixel unit directions of an equirect panorama (pixel centers).
pub fn equirect_direction_image(w: usize, h: usize) -> Image<Vec3> {
    Image::from_fn(w, h, |x, y| {
        equirect_px_to_dir(x as f64 + 0.5, y as f64 + 0.5, w, h)
    })
}

/// Spherical-Gaussian encoding of the peak direction:
/// e^(100 (u . f_dir - 1)) per pixel, maximum 1 where u = f_dir.
pub fn peak_dir_encoding(dirs: &Image<Vec3>, f_dir: Vec3) -> ScalarImage {
    dirs.map(|u| (DEFAULT_SHARPNESS * (u.dot(f_dir) - 1.0)).exp())
}

/// Hard-thresholded intensity panorama: f_intensity where the direction
/// encoding reaches 0.98, zero elsewhere.
pub fn peak_intensity_encoding(enc: &ScalarImage, f_intensity: Rgb) -> RgbImage {
    enc.map(|&e| {
        if e >= PEAK_ENCODING_THRESHOLD {
            f_intensity
        } else {
            Rgb::BLACK
        }
    })
}

/// Gamma + soft-clip tonemapping parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToneMapParams {
    pub gamma: f64,
    pub tau: f64,
}

impl Default for ToneMapParams {
    fn default() -> Self {
        ToneMapParams { gamma: 2.2, tau: 0.95 }
    }
}

/// C1 soft clip: identity below the knee, exponential saturation above,
/// asymptoting to 1. The result is capped at the largest double below 1 so
/// the codomain stays [0, 1) even where the exponential underflows.
pub fn soft_clip(x: f64, tau: f64) -> f64 {
    if x <= tau {
        x
    } else {
        let y = 1.0 - (1.0 - tau) * (-(x - tau) / (1.0 - tau)).exp();
        y.min(1.0 - f64::EPSILON / 2.0)
    }
}

pub fn soft_clip_derivative(x: f64, tau: f64) -> f64 {
    if x <= tau {
        1.0
    } else {
        (-(x - tau) / (1.0 - tau)).exp()
    }
}

/// HDR linear value -> LDR in [0, 1): gamma encode then soft clip.
pub fn tonemap_channel(x: f64, p: &ToneMapParams) -> f64 {
    soft_clip(x.max(0.0).powf(1.0 / p.gamma), p.tau)
}

/// d tonemap / d x; zero at x = 0 where the gamma curve is vertical.
pub fn tonemap_channel_derivative(x: f64, p: &ToneMapParams) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let u = x.powf(1.0 / p.gamma);
    soft_clip_derivative(u, p.tau) * u / (p.gamma * x)
}

pub fn hdr_to_ldr(img: &RgbImage, p: &ToneMapParams) -> RgbImage {
    img.map(|c| c.map(|x| tonemap_channel(x, p)))
}

/// Angle between two unit vectors in radians.
pub fn angular_loss(d1: Vec3, d2: Vec3) -> f64 {
    d1.dot(d2).clamp(-1.0, 1.0).acos()
}

/// Sum of squared log1p differences between two non-negative tensors.
pub fn log_encoded_l2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.ln_1p() - y.ln_1p();
            d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_sky() -> SkyDome {
        SkyDome::new(
            Vec3::new(0.0, 0.6, 0.8).normalized(),
            Rgb::new(50.0, 40.0, 30.0),
            Image::filled(16, 8, Rgb::gray(0.2)),
            DEFAULT_SHARPNESS,
        )
        .unwrap()
    }

    #[test]
    fn radiance_at_peak_with_black_background() {
        let mut sky = test_sky();
        sky.background = Image::filled(16, 8, Rgb::BLACK);
        let v = sky.radiance(sky.peak_dir);
        assert!((v.r - 50.0).abs() < 1e-9);
        assert!((v.g - 40.0).abs() < 1e-9);
        assert!((v.b - 30.0).abs() < 1e-9);
    }

    #[test]
    fn radiance_falls_off_with_the_lobe() {
        // l . peak = 0.98 at sharpness 100 gives e^-2.
        let mut sky = test_sky();
        sky.background = Image::filled(16, 8, Rgb::BLACK);
        sky.peak_intensity = Rgb::WHITE;
        sky.peak_dir = Vec3::Z;
        let c = 0.98f64;
        let l = Vec3::new((1.0 - c * c).sqrt(), 0.0, c);
        let v = sky.radiance(l);
        assert!((v.r - (-2.0f64).exp()).abs() < 1e-12);
        assert!(((-2.0f64).exp() - 0.1353).abs() < 1e-4);
    }

    #[test]
    fn zero_peak_reduces_to_background_lookup() {
        let mut sky = test_sky();
        sky.peak_intensity = Rgb::BLACK;
        let l = Vec3::new(0.3, -0.5, 0.4).normalized();
        let (px, py) = equirect_dir_to_px(l, 16, 8);
        let expect = sky.background.bilinear_wrap_x(px, py);
        assert_eq!(sky.radiance(l), expect);
    }

    #[test]
    fn peak_encoding_extremes() {
        let f_dir = Vec3::Z;
        let dirs = Image::from_vec(3, 1, vec![f_dir, Vec3::X, -f_dir]).unwrap();
        let enc = peak_dir_encoding(&dirs, f_dir);
        assert!((enc.pixels()[0] - 1.0).abs() < 1e-12);
        // Orthogonal direction: e^-100.
        assert!((enc.pixels()[1].ln() + 100.0).abs() < 1e-6);
        // Antipode: e^-200.
        assert!((enc.pixels()[2].ln() + 200.0).abs() < 1e-6);
    }

    #[test]
    fn peak_intensity_threshold_boundary() {
        let f_int = Rgb::new(9.0, 8.0, 7.0);
        let enc = Image::from_vec(3, 1, vec![1.0, 0.98, 0.97]).unwrap();
        let img = peak_intensity_encoding(&enc, f_int);
        assert_eq!(img.pixels()[0], f_int);
        assert_eq!(img.pixels()[1], f_int);
        assert_eq!(img.pixels()[2], Rgb::BLACK);
        // The threshold corresponds to u . f_dir = 1 + ln(0.98)/100, an
        // angular radius of about 1.15 degrees.
        let cos = 1.0 + 0.98f64.ln() / 100.0;
        assert!((cos - 0.999798).abs() < 1e-6);
        assert!((cos.acos().to_degrees() - 1.15).abs() < 0.02);
    }

    #[test]
    fn tonemap_identity_below_knee() {
        let p = ToneMapParams::default();
        let x = 0.5f64.powf(2.2);
        assert!((tonemap_channel(x, &p) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tonemap_knee_is_c1() {
        let tau = 0.95;
        assert_eq!(soft_clip(tau, tau), tau);
        // One-sided derivatives both equal 1 at the knee.
        assert_eq!(soft_clip_derivative(tau, tau), 1.0);
        assert_eq!(soft_clip_derivative(tau + 1e-300, tau), 1.0);
    }

    #[test]
    fn tonemap_saturates_below_one() {
        let p = ToneMapParams::default();
        // Gamma-encoded 1.95: 1 - 0.05 e^-20.
        let y = soft_clip(1.95, p.tau);
        assert!((y - (1.0 - 0.05 * (-20.0f64).exp())).abs() < 1e-15);
        assert!(y < 1.0);
        let big = tonemap_channel(1e9, &p);
        assert!(big < 1.0);
    }

    #[test]
    fn tonemap_monotone() {
        let p = ToneMapParams::default();
        let mut prev = -1.0;
        for i in 0..2000 {
            let x = i as f64 * 0.005;
            let y = tonemap_channel(x, &p);
            assert!(y >= prev);
            assert!((0.0..1.0).contains(&y));
            prev = y;
        }
    }

    #[test]
    fn angular_loss_cases() {
        assert_eq!(angular_loss(Vec3::Z, Vec3::Z), 0.0);
        assert!((angular_loss(Vec3::X, Vec3::Y) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn log_encoded_l2_cases() {
        assert_eq!(log_encoded_l2(&[3.0, 4.0], &[3.0, 4.0]), 0.0);
        // ln(1 + (e-1)) = 1, squared = 1.
        let v = log_encoded_l2(&[std::f64::consts::E - 1.0], &[0.0]);
        assert!((v - 1.0).abs() < 1e-12);
    }
}
