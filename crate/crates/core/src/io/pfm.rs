//! Portable FloatMap (PFM) read/write: float32 scanlines, bottom row first,
//! negative scale meaning little-endian.

use crate::error::{Error, Result};
use crate::image::{Image, RgbImage, ScalarImage};
use crate::math::Rgb;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

#[derive(Debug)]
pub enum PfmImage {
    Gray(ScalarImage),
    Rgb(RgbImage),
}

pub fn write_pfm_scalar(path: &Path, img: &ScalarImage) -> Result<()> {
    let mut file = create(path)?;
    write_header(&mut file, "Pf", img.width(), img.height(), path)?;
    let mut buf = Vec::with_capacity(img.len() * 4);
    for y in (0..img.height()).rev() {
        for x in 0..img.width() {
            buf.extend_from_slice(&(*img.get(x, y) as f32).to_le_bytes());
        }
    }
    file.write_all(&buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_pfm_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let mut file = create(path)?;
    write_header(&mut file, "PF", img.width(), img.height(), path)?;
    let mut buf = Vec::with_capacity(img.len() * 12);
    for y in (0..img.height()).rev() {
        for x in 0..img.width() {
            let p = img.get(x, y);
            buf.extend_from_slice(&(p.r as f32).to_le_bytes());
            buf.extend_from_slice(&(p.g as f32).to_le_bytes());
            buf.extend_from_slice(&(p.b as f32).to_le_bytes());
        }
    }
    file.write_all(&buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_pfm(path: &Path) -> Result<PfmImage> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = BufReader::new(file);
    let mut offset = 0u64;
    let malformed = |offset: u64, reason: String| Error::Malformed {
        format: "PFM",
        path: path.display().to_string(),
        offset,
        reason,
    };

    let kind = read_token(&mut reader, &mut offset)
        .map_err(|e| malformed(offset, format!("missing type header: {e}")))?;
    let color = match kind.as_str() {
        "PF" => true,
        "Pf" => false,
        other => return Err(malformed(0, format!("unknown PFM type {other:?}"))),
    };
    let w: usize = parse_token(&mut reader, &mut offset, path, "width")?;
    let h: usize = parse_token(&mut reader, &mut offset, path, "height")?;
    let scale: f64 = parse_token(&mut reader, &mut offset, path, "scale")?;
    if w == 0 || h == 0 || w.saturating_mul(h) > 1 << 28 {
        return Err(malformed(offset, format!("implausible size {w}x{h}")));
    }
    let little_endian = scale < 0.0;

    let channels = if color { 3 } else { 1 };
    let mut data = vec![0u8; w * h * channels * 4];
    reader
        .read_exact(&mut data)
        .map_err(|e| malformed(offset, format!("payload truncated: {e}")))?;
    let decode = |bytes: &[u8]| -> f32 {
        let arr = [bytes[0], bytes[1], bytes[2], bytes[3]];
        if little_endian {
            f32::from_le_bytes(arr)
        } else {
            f32::from_be_bytes(arr)
        }
    };

    if color {
        let mut img = Image::filled(w, h, Rgb::BLACK);
        for (row, y) in (0..h).rev().enumerate() {
            for x in 0..w {
                let o = (row * w + x) * 12;
                *img.get_mut(x, y) = Rgb::new(
                    decode(&data[o..]) as f64,
                    decode(&data[o + 4..]) as f64,
                    decode(&data[o + 8..]) as f64,
                );
            }
        }
        Ok(PfmImage::Rgb(img))
    } else {
        let mut img = Image::filled(w, h, 0.0f64);
        for (row, y) in (0..h).rev().enumerate() {
            for x in 0..w {
                let o = (row * w + x) * 4;
                *img.get_mut(x, y) = decode(&data[o..]) as f64;
            }
        }
        Ok(PfmImage::Gray(img))
    }
}

/// Read a PFM expected to be a scalar depth map.
pub fn read_pfm_scalar(path: &Path) -> Result<ScalarImage> {
    match read_pfm(path)? {
        PfmImage::Gray(img) => Ok(img),
        PfmImage::Rgb(_) => Err(Error::invalid(format!(
            "{} is a color PFM where a scalar map was expected",
            path.display()
        ))),
    }
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_header(file: &mut std::fs::File, kind: &str, w: usize, h: usize, path: &Path) -> Result<()> {
    file.write_all(format!("{kind}\n{w} {h}\n-1.0\n").as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_token(reader: &mut impl BufRead, offset: &mut u64) -> std::io::Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    // Skip leading whitespace.
    loop {
        reader.read_exact(&mut byte)?;
        *offset += 1;
        if !byte[0].is_ascii_whitespace() {
            tok.push(byte[0] as char);
            break;
        }
    }
    loop {
        reader.read_exact(&mut byte)?;
        *offset += 1;
        if byte[0].is_ascii_whitespace() {
            break;
        }
        tok.push(byte[0] as char);
    }
    Ok(tok)
}

fn parse_token<T: std::str::FromStr>(
    reader: &mut impl BufRead,
    offset: &mut u64,
    path: &Path,
    what: &str,
) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let start = *offset;
    let tok = read_token(reader, offset).map_err(|e| Error::Malformed {
        format: "PFM",
        path: path.display().to_string(),
        offset: start,
        reason: format!("missing {what}: {e}"),
    })?;
    tok.parse().map_err(|e| Error::Malformed {
        format: "PFM",
        path: path.display().to_string(),
        offset: start,
        reason: format!("bad {what} {tok:?}: {e}"),
    })
}
