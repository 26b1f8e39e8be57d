//! Dense row-major image buffers.

use crate::error::{Error, Result};
use crate::math::Rgb;

/// Row-major 2D buffer. `(0,0)` is the top-left pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Image<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Image { width, height, data: vec![value; width * height] }
    }
}

impl<T> Image<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "image buffer length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_size<U>(&self, other: &Image<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    pub fn pixels(&self) -> &[T] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Iterate `(x, y, &value)` in row-major order.
    pub fn enumerate(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        self.data
            .iter()
            .enumerate()
            .map(move |(i, v)| (i % self.width, i / self.width, v))
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Split the pixel buffer into `bands` contiguous row bands for
    /// deterministic parallel processing. Returns `(row_start, rows)` pairs.
    pub fn row_bands(&self, bands: usize) -> Vec<(usize, usize)> {
        row_bands(self.height, bands)
    }
}

/// Partition `rows` into at most `bands` contiguous chunks.
pub fn row_bands(rows: usize, bands: usize) -> Vec<(usize, usize)> {
    let bands = bands.max(1).min(rows.max(1));
    let base = rows / bands;
    let extra = rows % bands;
    let mut out = Vec::with_capacity(bands);
    let mut start = 0;
    for b in 0..bands {
        let n = base + usize::from(b < extra);
        if n > 0 {
            out.push((start, n));
        }
        start += n;
    }
    out
}

pub type RgbImage = Image<Rgb>;
pub type ScalarImage = Image<f64>;

impl RgbImage {
    pub fn black(width: usize, height: usize) -> Self {
        Image::filled(width, height, Rgb::BLACK)
    }

    /// Bilinear sample at a continuous coordinate where pixel centers sit at
    /// integer + 0.5. Wraps horizontally (azimuth-periodic panoramas) and
    /// clamps vertically.
    pub fn bilinear_wrap_x(&self, x: f64, y: f64) -> Rgb {
        let (t, w) = bilinear_taps_wrap_x(self.width, self.height, x, y);
        let v = |i: usize| *self.get(t[i].0, t[i].1);
        v(0) * w[0] + v(1) * w[1] + v(2) * w[2] + v(3) * w[3]
    }
}

/// Taps and weights for clamp-at-edge bilinear sampling, same conventions as
/// [`bilinear_taps_wrap_x`].
pub fn bilinear_taps_clamp(
    width: usize,
    height: usize,
    x: f64,
    y: f64,
) -> ([(usize, usize); 4], [f64; 4]) {
    let xf = x - 0.5;
    let yf = y - 0.5;
    let x0 = xf.floor();
    let y0 = yf.floor();
    let fx = xf - x0;
    let fy = yf - y0;
    let w = width as i64;
    let h = height as i64;
    let xi0 = (x0 as i64).clamp(0, w - 1) as usize;
    let xi1 = (x0 as i64 + 1).clamp(0, w - 1) as usize;
    let yi0 = (y0 as i64).clamp(0, h - 1) as usize;
    let yi1 = (y0 as i64 + 1).clamp(0, h - 1) as usize;
    (
        [(xi0, yi0), (xi1, yi0), (xi0, yi1), (xi1, yi1)],
        [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ],
    )
}

/// Taps and weights for `bilinear_wrap_x`: four `(x, y)` texel coordinates
/// and their weights in the order (00, 10, 01, 11).
pub fn bilinear_taps_wrap_x(
    width: usize,
    height: usize,
    x: f64,
    y: f64,
) -> ([(usize, usize); 4], [f64; 4]) {
    let xf = x - 0.5;
    let yf = y - 0.5;
    let x0 = xf.floor();
    let y0 = yf.floor();
    let fx = xf - x0;
    let fy = yf - y0;
    let w = width as i64;
    let h = height as i64;
    let xi0 = (x0 as i64).rem_euclid(w) as usize;
    let xi1 = (x0 as i64 + 1).rem_euclid(w) as usize;
    let yi0 = (y0 as i64).clamp(0, h - 1) as usize;
    let yi1 = (y0 as i64 + 1).clamp(0, h - 1) as usize;
    (
        [(xi0, yi0), (xi1, yi0), (xi0, yi1), (xi1, yi1)],
        [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ],
    )
}
