//! Density heatmaps as binary PPM (P6).
//!
//! Colors come from linear interpolation between five fixed anchors of the
//! density normalized by its maximum, `t = rho / max rho`:
//!
//! | t | RGB |
//! |---|-----|
//! | 0.00 | (0, 0, 4) |
//! | 0.25 | (87, 16, 110) |
//! | 0.50 | (188, 55, 84) |
//! | 0.75 | (249, 142, 9) |
//! | 1.00 | (252, 255, 164) |
//!
//! Channels are rounded to the nearest integer. The top image row is the
//! largest `x2`, the left column the smallest `x1`.

use std::path::Path;

use crate::error::Result;
use crate::field::Field;

pub const COLORMAP: [[f64; 3]; 5] = [
    [0.0, 0.0, 4.0],
    [87.0, 16.0, 110.0],
    [188.0, 55.0, 84.0],
    [249.0, 142.0, 9.0],
    [252.0, 255.0, 164.0],
];

pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let x = t * (COLORMAP.len() - 1) as f64;
    let i = (x.floor() as usize).min(COLORMAP.len() - 2);
    let f = x - i as f64;
    let (a, b) = (COLORMAP[i], COLORMAP[i + 1]);
    [0, 1, 2].map(|c| (a[c] + f * (b[c] - a[c])).round() as u8)
}

/// `|phi|²` on the grid, row-major as the real-space samples.
pub fn density(phi: &Field) -> Vec<f64> {
    phi.to_real().iter().map(|z| z.norm_sqr()).collect()
}

/// RGB pixels of an `n x n` density, each cell drawn as `scale x scale` pixels.
pub fn density_rgb(rho: &[f64], n: usize, scale: usize) -> Vec<u8> {
    let max = rho.iter().copied().fold(0.0, f64::max);
    let side = n * scale;
    let mut out = Vec::with_capacity(3 * side * side);
    for py in 0..side {
        let row = n - 1 - py / scale;
        for px in 0..side {
            let v = rho[row * n + px / scale];
            let t = if max > 0.0 { v / max } else { 0.0 };
            out.extend_from_slice(&colormap(t));
        }
    }
    out
}

pub fn density_ppm(phi: &Field, scale: usize) -> Vec<u8> {
    let n = phi.grid().n();
    let scale = scale.max(1);
    let side = n * scale;
    let mut out = format!("P6\n{side} {side}\n255\n").into_bytes();
    out.extend(density_rgb(&density(phi), n, scale));
    out
}

pub fn plot_density(phi: &Field, path: impl AsRef<Path>, scale: usize) -> Result<()> {
    std::fs::write(path, density_ppm(phi, scale))?;
    Ok(())
}
