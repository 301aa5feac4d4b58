use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{fft2_planes, Grid};

/// Ingredients of a synthetic temperature field, in arbitrary units before
/// the final min-max normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    /// Top-to-bottom linear drop.
    pub gradient: f64,
    /// Standard deviation of the power-law random field.
    pub spectrum_amplitude: f64,
    /// Power spectrum falls off as `k^(−beta)`.
    pub beta: f64,
    pub fronts: usize,
    /// Peak step height of each front.
    pub front_amplitude: f64,
    /// Width of the `tanh` front profile, in pixels.
    pub front_width: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            gradient: 1.0,
            spectrum_amplitude: 0.5,
            beta: 3.0,
            fronts: 2,
            front_amplitude: 0.4,
            front_width: 6.0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.gradient, self.spectrum_amplitude, self.beta, self.front_amplitude, self.front_width]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.spectrum_amplitude < 0.0 || self.front_amplitude < 0.0 {
            return Err(Error::invalid("synth_sst", format!("bad parameters {self:?}")));
        }
        if self.fronts > 0 && !(self.front_width > 0.0) {
            return Err(Error::invalid("synth_sst", "front width must be positive"));
        }
        Ok(())
    }
}

/// Signed frequency of DFT bin `i` on an axis of length `n`, in cycles per pixel.
fn bin_frequency(i: usize, n: usize) -> f64 {
    let k = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
    k / n as f64
}

/// Zero-mean, unit-variance random field with power spectrum `∝ k^(−beta)`.
fn power_law_field(h: usize, w: usize, beta: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..h * w)
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    fft2_planes(&mut buf, h, w, false);
    for u in 0..h {
        for v in 0..w {
            let k = bin_frequency(u, h).hypot(bin_frequency(v, w));
            let gain = if k == 0.0 { 0.0 } else { k.powf(-beta / 2.0) };
            buf[u * w + v] *= gain;
        }
    }
    fft2_planes(&mut buf, h, w, true);
    let field: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let std = (field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    if std == 0.0 {
        return vec![0.0; field.len()];
    }
    field.iter().map(|v| (v - mean) / std).collect()
}

/// Deterministic synthetic field of shape `(1, 1, height, width)`,
/// min-max normalized to `[0, 1]` (a constant field maps to zeros).
pub fn synth_sst(height: usize, width: usize, seed: u64, params: &SynthParams) -> Result<Grid> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("synth_sst", format!("size {height}x{width} must be positive")));
    }
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw = vec![0.0; height * width];
    let span = (height.max(2) - 1) as f64;
    for (i, v) in raw.iter_mut().enumerate() {
        *v = params.gradient * (1.0 - (i / width) as f64 / span);
    }
    if params.spectrum_amplitude > 0.0 {
        let noise = power_law_field(height, width, params.beta, &mut rng);
        for (v, n) in raw.iter_mut().zip(&noise) {
            *v += params.spectrum_amplitude * n;
        }
    }
    for _ in 0..params.fronts {
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let cy = rng.gen_range(0.0..height as f64);
        let cx = rng.gen_range(0.0..width as f64);
        let amp = params.front_amplitude * rng.gen_range(0.5..1.0) * if rng.gen() { 1.0 } else { -1.0 };
        let (s, c) = angle.sin_cos();
        for (i, v) in raw.iter_mut().enumerate() {
            let d = ((i / width) as f64 - cy) * c - ((i % width) as f64 - cx) * s;
            *v += amp * (d / params.front_width).tanh();
        }
    }
    let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let data = if hi > lo {
        raw.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; raw.len()]
    };
    Grid::from_vec([1, 1, height, width], data)
}
