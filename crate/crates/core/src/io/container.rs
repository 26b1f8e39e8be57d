//! HLF1 light-field container.
//!
//! Layout (all little-endian):
//!   magic "HLF1", version u32
//!   sky block: peak_dir 3xf64, peak_intensity 3xf64, sharpness f64,
//!              bg_width u32, bg_height u32, payload kind u8 (0 = raw f32),
//!              then bg_width*bg_height raw f32 RGB triples (row-major)
//!   grid block: dims 3xu32, half_extent_xy f64, z_range 2xf64,
//!               curvature f64, origin 3xf64, then 8 channel planes of
//!               X*Y*Z f32 each in order c.r c.g c.b mu.x mu.y mu.z sigma
//!               alpha (x fastest, then y, then z)

use crate::error::{Error, Result};
use crate::image::Image;
use crate::lightfield::HybridLightField;
use crate::math::{Rgb, Vec3};
use crate::sky::SkyDome;
use crate::volume::{LogProjection, VsgGrid, VsgVoxel};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"HLF1";
const VERSION: u32 = 1;
const PAYLOAD_RAW_F32: u8 = 0;

pub fn write_container(path: &Path, lf: &HybridLightField) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);

    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;

    let sky = &lf.sky;
    for v in [sky.peak_dir.x, sky.peak_dir.y, sky.peak_dir.z] {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    for v in [sky.peak_intensity.r, sky.peak_intensity.g, sky.peak_intensity.b] {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    w.write_all(&sky.sharpness.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(sky.background.width() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(sky.background.height() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&[PAYLOAD_RAW_F32]).map_err(io_err)?;
    for p in sky.background.pixels() {
        for v in [p.r, p.g, p.b] {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
        }
    }

    let grid = &lf.grid;
    let (nx, ny, nz) = grid.dims();
    for d in [nx, ny, nz] {
        w.write_all(&(d as u32).to_le_bytes()).map_err(io_err)?;
    }
    let m = &grid.mapping;
    for v in [
        m.half_extent_xy,
        m.z_range.0,
        m.z_range.1,
        m.curvature,
        m.origin.x,
        m.origin.y,
        m.origin.z,
    ] {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    let channel = |v: &VsgVoxel, ch: usize| -> f64 {
        match ch {
            0 => v.c.r,
            1 => v.c.g,
            2 => v.c.b,
            3 => v.mu.x,
            4 => v.mu.y,
            5 => v.mu.z,
            6 => v.sigma,
            _ => v.alpha,
        }
    };
    for ch in 0..8 {
        for v in &grid.voxels {
            w.write_all(&(channel(v, ch) as f32).to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

struct Counter<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Counter<R> {
    fn f64(&mut self, path: &Path, what: &str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.exact(&mut b, path, what)?;
        Ok(f64::from_le_bytes(b))
    }

    fn f32(&mut self, path: &Path, what: &str) -> Result<f32> {
        let mut b = [0u8; 4];
        self.exact(&mut b, path, what)?;
        Ok(f32::from_le_bytes(b))
    }

    fn u32(&mut self, path: &Path, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b, path, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn exact(&mut self, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| Error::Malformed {
            format: "HLF1",
            path: path.display().to_string(),
            offset: at,
            reason: format!("reading {what}: {e}"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }
}

pub fn read_container(path: &Path, samples_per_ray: usize) -> Result<HybridLightField> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Counter { inner: std::io::BufReader::new(file), offset: 0 };
    let malformed = |offset: u64, reason: String| Error::Malformed {
        format: "HLF1",
        path: path.display().to_string(),
        offset,
        reason,
    };

    let mut magic = [0u8; 4];
    r.exact(&mut magic, path, "magic")?;
    if &magic != MAGIC {
        return Err(malformed(0, format!("bad magic {magic:?}")));
    }
    let version = r.u32(path, "version")?;
    if version != VERSION {
        return Err(malformed(4, format!("unsupported version {version}")));
    }

    let peak_dir = Vec3::new(
        r.f64(path, "peak_dir.x")?,
        r.f64(path, "peak_dir.y")?,
        r.f64(path, "peak_dir.z")?,
    );
    let peak_intensity = Rgb::new(
        r.f64(path, "peak_intensity.r")?,
        r.f64(path, "peak_intensity.g")?,
        r.f64(path, "peak_intensity.b")?,
    );
    let sharpness = r.f64(path, "sharpness")?;
    let bg_w = r.u32(path, "bg width")? as usize;
    let bg_h = r.u32(path, "bg height")? as usize;
    if bg_w == 0 || bg_h == 0 || bg_w.saturating_mul(bg_h) > 1 << 26 {
        return Err(malformed(r.offset, format!("implausible background size {bg_w}x{bg_h}")));
    }
    let mut kind = [0u8; 1];
    r.exact(&mut kind, path, "payload kind")?;
    if kind[0] != PAYLOAD_RAW_F32 {
        return Err(malformed(r.offset - 1, format!("unknown payload kind {}", kind[0])));
    }
    let mut bg = Vec::with_capacity(bg_w * bg_h);
    for _ in 0..bg_w * bg_h {
        bg.push(Rgb::new(
            r.f32(path, "background")? as f64,
            r.f32(path, "background")? as f64,
            r.f32(path, "background")? as f64,
        ));
    }
    let background = Image::from_vec(bg_w, bg_h, bg)?;
    let sky = SkyDome::new(peak_dir.normalized_or(Vec3::Z), peak_intensity, background, sharpness)?;

    let nx = r.u32(path, "dims.x")? as usize;
    let ny = r.u32(path, "dims.y")? as usize;
    let nz = r.u32(path, "dims.z")? as usize;
    let count = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nz))
        .filter(|&v| v > 0 && v <= 1 << 28)
        .ok_or_else(|| malformed(r.offset, format!("implausible grid dims {nx}x{ny}x{nz}")))?;
    let mapping = LogProjection {
        half_extent_xy: r.f64(path, "half_extent_xy")?,
        z_range: (r.f64(path, "z_range.0")?, r.f64(path, "z_range.1")?),
        curvature: r.f64(path, "curvature")?,
        origin: Vec3::new(
            r.f64(path, "origin.x")?,
            r.f64(path, "origin.y")?,
            r.f64(path, "origin.z")?,
        ),
    };
    let mut voxels = vec![VsgVoxel::EMPTY; count];
    for ch in 0..8usize {
        for voxel in voxels.iter_mut() {
            let v = r.f32(path, "channel plane")? as f64;
            match ch {
                0 => voxel.c.r = v,
                1 => voxel.c.g = v,
                2 => voxel.c.b = v,
                3 => voxel.mu.x = v,
                4 => voxel.mu.y = v,
                5 => voxel.mu.z = v,
                6 => voxel.sigma = v,
                _ => voxel.alpha = v,
            }
        }
    }
    let grid = VsgGrid::from_voxels((nx, ny, nz), voxels, mapping)?;
    Ok(HybridLightField::new(sky, grid, samples_per_ray))
}
