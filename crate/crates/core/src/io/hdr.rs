//! Radiance RGBE (.hdr) and 8-bit PNG image I/O, backed by the image crate.

use crate::error::{Error, Result};
use crate::image::{Image, RgbImage};
use crate::math::Rgb;
use std::path::Path;

pub fn read_hdr(path: &Path) -> Result<RgbImage> {
    let dynimg = image::open(path)?;
    let f = dynimg.to_rgb32f();
    let (w, h) = (f.width() as usize, f.height() as usize);
    Ok(Image::from_fn(w, h, |x, y| {
        let p = f.get_pixel(x as u32, y as u32);
        Rgb::new(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64)
    }))
}

pub fn write_hdr(path: &Path, img: &RgbImage) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let encoder = image::codecs::hdr::HdrEncoder::new(std::io::BufWriter::new(file));
    let pixels: Vec<image::Rgb<f32>> = img
        .pixels()
        .iter()
        .map(|p| image::Rgb([p.r as f32, p.g as f32, p.b as f32]))
        .collect();
    encoder
        .encode(&pixels, img.width(), img.height())
        .map_err(Error::from)
}

/// Read an 8-bit PNG into sRGB-encoded values in [0, 1].
pub fn read_png(path: &Path) -> Result<RgbImage> {
    let dynimg = image::open(path)?;
    let rgb = dynimg.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok(Image::from_fn(w, h, |x, y| {
        let p = rgb.get_pixel(x as u32, y as u32);
        Rgb::new(
            p.0[0] as f64 / 255.0,
            p.0[1] as f64 / 255.0,
            p.0[2] as f64 / 255.0,
        )
    }))
}

/// Write sRGB-encoded values in [0, 1] as an 8-bit PNG.
pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let mut out = image::RgbImage::new(img.width() as u32, img.height() as u32);
    for (x, y, p) in img.enumerate() {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        out.put_pixel(x as u32, y as u32, image::Rgb([q(p.r), q(p.g), q(p.b)]));
    }
    out.save(path).map_err(Error::from)
}

/// Write a boolean mask as a black/white PNG.
pub fn write_png_mask(path: &Path, mask: &Image<bool>) -> Result<()> {
    write_png(
        path,
        &mask.map(|&m| if m { Rgb::WHITE } else { Rgb::BLACK }),
    )
}
