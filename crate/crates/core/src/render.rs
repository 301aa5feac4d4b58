//! Fixed-colormap PNG heatmaps of single-channel grids.

use crate::error::{Error, Result};
use crate::numerics::Grid;

/// Blue to yellow, for field values.
pub const FIELD_STOPS: [[u8; 3]; 5] = [[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]];

/// Black to pale yellow through red, for error magnitudes.
pub const ERROR_STOPS: [[u8; 3]; 5] = [[0, 0, 4], [87, 16, 110], [188, 55, 84], [249, 142, 9], [252, 255, 164]];

/// Linear interpolation between evenly spaced stops; `t` is clamped to `[0, 1]`.
pub fn colormap(stops: &[[u8; 3]], t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let pos = t * (stops.len() - 1) as f64;
    let i = (pos.floor() as usize).min(stops.len() - 2);
    let f = pos - i as f64;
    let mut px = [0u8; 3];
    for (k, p) in px.iter_mut().enumerate() {
        let (a, b) = (stops[i][k] as f64, stops[i + 1][k] as f64);
        *p = (a + (b - a) * f).round() as u8;
    }
    px
}

/// PNG bytes of the first plane of `grid`, mapping `[lo, hi]` onto the
/// stops. Row 0 is the top row of the image.
pub fn heatmap_png(grid: &Grid, lo: f64, hi: f64, stops: &[[u8; 3]]) -> Result<Vec<u8>> {
    if grid.batch() != 1 || grid.channels() != 1 {
        return Err(Error::shape("heatmap", format!("expected one plane, got {:?}", grid.shape())));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid("heatmap", format!("bad value range [{lo}, {hi}]")));
    }
    let (h, w) = (grid.height(), grid.width());
    let mut rgb = Vec::with_capacity(3 * h * w);
    for &v in grid.data() {
        rgb.extend_from_slice(&colormap(stops, (v - lo) / (hi - lo)));
    }
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::invalid("heatmap", e.to_string());
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&rgb).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(out)
}
