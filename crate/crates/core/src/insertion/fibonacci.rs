//! Fibonacci lattice directions on the upper hemisphere.

use crate::math::{orthonormal_basis, Vec3};
use std::f64::consts::PI;

/// (sqrt(5) - 1) / 2; golden-angle azimuth increment as a fraction of a turn.
const GOLDEN_RATIO_CONJUGATE: f64 = 0.618_033_988_749_894_9;

/// `n` deterministic quasi-uniform directions on the hemisphere around `up`:
/// heights z_i = 1 - (i+0.5)/n are area-uniform, azimuths advance by the
/// golden angle. Every direction satisfies dir . up > 0.
pub fn fibonacci_hemisphere(n: usize, up: Vec3) -> Vec<Vec3> {
    let (t, b) = orthonormal_basis(up);
    (0..n)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = 2.0 * PI * (i as f64 * GOLDEN_RATIO_CONJUGATE);
            t * (r * phi.cos()) + b * (r * phi.sin()) + up * z
        })
        .collect()
}
