//! Ratio shadow map type and the final image composition
//! I_edit = M (.) tonemap(I_object) + (1-M) (.) I (.) I_shadow.

use crate::error::{Error, Result};
use crate::image::{bilinear_taps_clamp, Image, RgbImage};
use crate::math::Rgb;
use crate::sky::{tonemap_channel, ToneMapParams};

/// Per-pixel before/after intensity ratio at shadow resolution. In scalar
/// mode the three channels hold the same luminance-averaged ratio; RGB mode
/// keeps the per-channel ratios.
#[derive(Clone, Debug)]
pub struct RatioShadowMap {
    pub values: RgbImage,
    pub scalar: bool,
}

impl RatioShadowMap {
    pub fn unit(width: usize, height: usize, scalar: bool) -> Self {
        RatioShadowMap { values: Image::filled(width, height, Rgb::WHITE), scalar }
    }

    /// Bilinearly resample the ratio map to the full image resolution.
    pub fn upsample(&self, width: usize, height: usize) -> RgbImage {
        upsample_bilinear(&self.values, width, height)
    }
}

/// Clamp-at-edge bilinear upsample; source pixel centers map uniformly onto
/// the target.
pub fn upsample_bilinear(src: &RgbImage, width: usize, height: usize) -> RgbImage {
    let sx = src.width() as f64 / width as f64;
    let sy = src.height() as f64 / height as f64;
    Image::from_fn(width, height, |x, y| {
        let (taps, w) = bilinear_taps_clamp(
            src.width(),
            src.height(),
            (x as f64 + 0.5) * sx,
            (y as f64 + 0.5) * sy,
        );
        let v = |i: usize| *src.get(taps[i].0, taps[i].1);
        v(0) * w[0] + v(1) * w[1] + v(2) * w[2] + v(3) * w[3]
    })
}

/// Darken one sRGB-encoded background channel by a linear-space ratio:
/// de-gamma, multiply, re-gamma.
pub fn shade_background_channel(bg: f64, s: f64, gamma: f64) -> f64 {
    let lin = bg.max(0.0).powf(gamma);
    (lin * s).max(0.0).powf(1.0 / gamma)
}

/// d shade_background_channel / d s; zero where the product pins at 0.
pub fn shade_background_channel_ds(bg: f64, s: f64, gamma: f64) -> f64 {
    let lin = bg.max(0.0).powf(gamma);
    let prod = lin * s;
    if prod <= 0.0 {
        return 0.0;
    }
    prod.powf(1.0 / gamma - 1.0) * lin / gamma
}

/// Composite the edited image: foreground pixels are the tonemapped HDR
/// object render, background pixels are the input multiplied by the
/// upsampled shadow ratio in linear space.
pub fn composite(
    background: &RgbImage,
    foreground_hdr: &RgbImage,
    mask: &Image<bool>,
    shadow: &RatioShadowMap,
    tone: &ToneMapParams,
) -> Result<RgbImage> {
    if !background.same_size(foreground_hdr) || !background.same_size(mask) {
        return Err(Error::SizeMismatch {
            expected_w: background.width(),
            expected_h: background.height(),
            got_w: foreground_hdr.width(),
            got_h: foreground_hdr.height(),
        });
    }
    let s_up = shadow.upsample(background.width(), background.height());
    Ok(Image::from_fn(background.width(), background.height(), |x, y| {
        if *mask.get(x, y) {
            foreground_hdr.get(x, y).map(|c| tonemap_channel(c, tone))
        } else {
            let bg = *background.get(x, y);
            let s = *s_up.get(x, y);
            Rgb::new(
                shade_background_channel(bg.r, s.r, tone.gamma),
                shade_background_channel(bg.g, s.g, tone.gamma),
                shade_background_channel(bg.b, s.b, tone.gamma),
            )
        }
    }))
}
