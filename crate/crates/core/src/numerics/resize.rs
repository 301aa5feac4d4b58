//! Separable bicubic resampling with a pinned kernel.
//!
//! Catmull-Rom style cubic convolution with parameter `a` (default −0.5),
//! center-aligned sample positions and clamp-to-edge borders. Rows are
//! resampled first, then columns; all arithmetic is 64-bit.

use super::grid::Grid;
use crate::error::{Error, Result};

pub const CATMULL_ROM_A: f64 = -0.5;

/// Cubic convolution kernel.
pub fn cubic_weight(t: f64, a: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Four `(index, weight)` taps for every output sample along one axis.
fn axis_taps(in_len: usize, out_len: usize, a: f64) -> Vec<[(usize, f64); 4]> {
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * ratio - 0.5;
            let base = src.floor();
            let mut taps = [(0usize, 0.0f64); 4];
            for (k, tap) in taps.iter_mut().enumerate() {
                let i = base + k as f64 - 1.0;
                let idx = i.clamp(0.0, (in_len - 1) as f64) as usize;
                *tap = (idx, cubic_weight(src - i, a));
            }
            taps
        })
        .collect()
}

/// Resample every plane of `x` to `out_h × out_w`.
pub fn bicubic_resize_to(x: &Grid, out_h: usize, out_w: usize, a: f64) -> Result<Grid> {
    let [b, c, h, w] = x.shape();
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(
            "bicubic_resize",
            format!("output size {out_h}x{out_w} must be positive"),
        ));
    }
    if h == 0 || w == 0 {
        return Err(Error::invalid("bicubic_resize", "input has empty spatial extent"));
    }
    let tx = axis_taps(w, out_w, a);
    let ty = axis_taps(h, out_h, a);
    let mut out = Grid::zeros([b, c, out_h, out_w]);
    let mut tmp = vec![0.0; h * out_w];
    for bi in 0..b {
        for ci in 0..c {
            let src = x.plane(bi, ci);
            for row in 0..h {
                let s = &src[row * w..(row + 1) * w];
                for (ox, taps) in tx.iter().enumerate() {
                    tmp[row * out_w + ox] = taps.iter().map(|&(i, wt)| wt * s[i]).sum();
                }
            }
            let dst = out.plane_mut(bi, ci);
            for (oy, taps) in ty.iter().enumerate() {
                for ox in 0..out_w {
                    dst[oy * out_w + ox] = taps.iter().map(|&(i, wt)| wt * tmp[i * out_w + ox]).sum();
                }
            }
        }
    }
    Ok(out)
}

/// Resample by the rational factor `num / den`; output extents are
/// `floor(len * num / den)`.
pub fn bicubic_resize(x: &Grid, num: usize, den: usize, a: f64) -> Result<Grid> {
    if num == 0 || den == 0 {
        return Err(Error::invalid(
            "bicubic_resize",
            format!("scale {num}/{den} must be positive"),
        ));
    }
    let out_h = x.height() * num / den;
    let out_w = x.width() * num / den;
    bicubic_resize_to(x, out_h, out_w, a)
}
