//! Training losses and evaluation metrics.
//!
//! All reductions are means, so the default weights carry over between patch
//! sizes. The spectral loss weights each coefficient's squared error by its
//! own error magnitude; the weight is held constant when differentiating.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{check_same_shape, fft2_planes, Grid, Shape, Var};

/// Returned by [`psnr`] when the two inputs are identical.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Weights of the composite loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_freq: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_rec: 0.1,
            lambda_freq: 0.9,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_rec: f64, lambda_freq: f64) -> Result<Self> {
        let w = LossWeights { lambda_rec, lambda_freq };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda_rec) || !ok(self.lambda_freq) {
            return Err(Error::invalid("loss_weights", format!("weights must be finite and non-negative, got {self:?}")));
        }
        if self.lambda_rec == 0.0 && self.lambda_freq == 0.0 {
            return Err(Error::invalid("loss_weights", "at least one weight must be positive"));
        }
        Ok(())
    }
}

/// Normalized 2-D DFT of every `(b, c)` plane:
/// `F(u,v) = 1/(HW) Σ f(x,y)·exp(−2πi(ux/H + vy/W))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    shape: Shape,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Coefficient `(u, v)` of plane `(b, c)`.
    pub fn at(&self, b: usize, c: usize, u: usize, v: usize) -> Complex64 {
        let [_, ch, h, w] = self.shape;
        self.coeffs[((b * ch + c) * h + u) * w + v]
    }
}

pub fn dft2(x: &Grid) -> Spectrum {
    let [_, _, h, w] = x.shape();
    let mut coeffs: Vec<Complex64> = x.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_planes(&mut coeffs, h, w, false);
    let norm = 1.0 / (h * w).max(1) as f64;
    coeffs.iter_mut().for_each(|c| *c *= norm);
    Spectrum { shape: x.shape(), coeffs }
}

/// Mean absolute difference.
pub fn rec_loss(sr: &Grid, hr: &Grid) -> Result<f64> {
    check_same_shape("rec_loss", sr, hr)?;
    Ok(mean_of(sr.data().iter().zip(hr.data()).map(|(a, b)| (a - b).abs()), sr.len()))
}

/// `mean ω·|F_HR − F_SR|²` with `ω = |F_HR − F_SR|`.
pub fn freq_loss(hr: &Grid, sr: &Grid) -> Result<f64> {
    check_same_shape("freq_loss", hr, sr)?;
    let diff = dft2(&hr.zip_map(sr, |a, b| a - b));
    Ok(mean_of(diff.coeffs.iter().map(|c| c.norm().powi(3)), diff.coeffs.len()))
}

pub fn total_loss(sr: &Grid, hr: &Grid, weights: &LossWeights) -> Result<f64> {
    weights.validate()?;
    Ok(weights.lambda_rec * rec_loss(sr, hr)? + weights.lambda_freq * freq_loss(hr, sr)?)
}

fn mean_of(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

/// `10·log₁₀(peak²/MSE)`; [`PSNR_CAP_DB`] when the inputs are identical.
pub fn psnr(a: &Grid, b: &Grid, peak: f64) -> Result<f64> {
    check_same_shape("psnr", a, b)?;
    if a.is_empty() {
        return Err(Error::invalid("psnr", "empty input"));
    }
    let mse = mean_of(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)), a.len());
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable valid-window Gaussian filter of one plane.
fn gaussian_valid(plane: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| taps[k] * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| taps[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over all valid 11×11 Gaussian windows,
/// channels and batch items, for data on a unit peak.
pub fn ssim(a: &Grid, b: &Grid) -> Result<f64> {
    check_same_shape("ssim", a, b)?;
    let [n, c, h, w] = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape("ssim", format!("{h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let taps = ssim_taps();
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let (mut total, mut count) = (0.0, 0usize);
    for bi in 0..n {
        for ci in 0..c {
            let (x, y) = (a.plane(bi, ci), b.plane(bi, ci));
            let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
            let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
            let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
            let [mx, my, sxx, syy, sxy] = [x, y, &xx[..], &yy[..], &xy[..]].map(|p| gaussian_valid(p, h, w, &taps));
            for i in 0..mx.len() {
                let (vx, vy) = (sxx[i] - mx[i] * mx[i], syy[i] - my[i] * my[i]);
                let cov = sxy[i] - mx[i] * my[i];
                let num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
                let den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
                total += num / den;
            }
            count += mx.len();
        }
    }
    Ok(total / count as f64)
}

/// One row of the evaluation log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

impl MetricRow {
    pub const HEADER: &'static str = "epoch,split,psnr_db,ssim";
}

impl fmt::Display for MetricRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{:.6},{:.6}", self.epoch, self.split, self.psnr_db, self.ssim)
    }
}

impl<'t> Var<'t> {
    /// Differentiable [`rec_loss`] with `self` as the prediction.
    pub fn rec_loss(self, target: Var<'t>) -> Result<Var<'t>> {
        let (sr, hr) = (self.value(), target.value());
        let value = rec_loss(&sr, &hr)?;
        let n = sr.len().max(1) as f64;
        Ok(self.tape().op(Grid::scalar(value), &[self, target], move |g| {
            let s = g.data()[0] / n;
            let gs = sr.zip_map(&hr, |a, b| s * sign(a - b));
            let gt = gs.map(|v| -v);
            vec![Some(gs), Some(gt)]
        }))
    }

    /// Differentiable [`freq_loss`] with `self` as the prediction; the
    /// per-coefficient weight is treated as a constant.
    pub fn freq_loss(self, target: Var<'t>) -> Result<Var<'t>> {
        let (sr, hr) = (self.value(), target.value());
        check_same_shape("freq_loss", &sr, &hr)?;
        let err = dft2(&sr.zip_map(&hr, |a, b| a - b));
        let n = err.coeffs.len().max(1);
        let value = mean_of(err.coeffs.iter().map(|c| c.norm().powi(3)), n);
        let err = Arc::new(err);
        Ok(self.tape().op(Grid::scalar(value), &[self, target], move |g| {
            let gs = freq_loss_grad(&err, g.data()[0] / n as f64);
            let gt = gs.map(|v| -v);
            vec![Some(gs), Some(gt)]
        }))
    }

    /// `λ_rec·rec + λ_freq·freq`.
    pub fn total_loss(self, target: Var<'t>, weights: &LossWeights) -> Result<Var<'t>> {
        weights.validate()?;
        let rec = self.rec_loss(target)?.scale(weights.lambda_rec);
        let freq = self.freq_loss(target)?.scale(weights.lambda_freq);
        rec.add(freq)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of `scale·Σ ω|E|²` w.r.t. the spatial error `e`, where `E` is the
/// normalized spectrum of `e` and `ω = |E|` is frozen:
/// `∂/∂e_x = 2·scale/(HW) · Re Σ_k ω_k E_k e^{+iθ_kx}`.
fn freq_loss_grad(err: &Spectrum, scale: f64) -> Grid {
    let [_, _, h, w] = err.shape;
    let mut buf: Vec<Complex64> = err.coeffs.iter().map(|c| c * c.norm()).collect();
    fft2_planes(&mut buf, h, w, true);
    let k = 2.0 * scale / (h * w).max(1) as f64;
    let data = buf.iter().map(|c| k * c.re).collect();
    Grid::from_vec(err.shape, data).expect("spectrum shape matches")
}
