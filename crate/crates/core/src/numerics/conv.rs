//! Dense, depthwise and per-position (1×1) convolutions.
//!
//! Dense convolution lowers each batch item to an `im2col` matrix and calls
//! a single GEMM; batch items run in parallel and per-item weight gradients
//! are reduced in batch order so results do not depend on the thread count.

use rayon::prelude::*;

use super::grid::Grid;
use super::tape::Var;
use crate::error::{Error, Result};

/// Row-major `c = a·b + beta·c` where `a` is `m×k` (or `k×m` if `ta`) and
/// `b` is `k×n` (or `n×k` if `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths were checked above and the strides describe
    // exactly those row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output extent of a convolution along one axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Valid output range along one axis for kernel offset `k`.
    fn valid(out_len: usize, in_len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
        // i = o*stride + k - pad must lie in [0, in_len)
        let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
        let hi = if in_len + pad > k {
            ((in_len + pad - k - 1) / stride + 1).min(out_len)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let p = self.cols();
        cols.fill(0.0);
        for c in 0..self.cin {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                let (oy0, oy1) = Self::valid(self.ho, self.h, ky, self.stride, self.pad);
                for kx in 0..self.kw {
                    let (ox0, ox1) = Self::valid(self.wo, self.w, kx, self.stride, self.pad);
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in oy0..oy1 {
                        let iy = oy * self.stride + ky - self.pad;
                        let src = &plane[iy * self.w..(iy + 1) * self.w];
                        let d = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if self.stride == 1 {
                            let ix0 = ox0 + kx - self.pad;
                            d[ox0..ox1].copy_from_slice(&src[ix0..ix0 + (ox1 - ox0)]);
                        } else {
                            for ox in ox0..ox1 {
                                d[ox] = src[ox * self.stride + kx - self.pad];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], x: &mut [f64]) {
        let p = self.cols();
        x.fill(0.0);
        for c in 0..self.cin {
            let plane = &mut x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                let (oy0, oy1) = Self::valid(self.ho, self.h, ky, self.stride, self.pad);
                for kx in 0..self.kw {
                    let (ox0, ox1) = Self::valid(self.wo, self.w, kx, self.stride, self.pad);
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in oy0..oy1 {
                        let iy = oy * self.stride + ky - self.pad;
                        let dst = &mut plane[iy * self.w..(iy + 1) * self.w];
                        let s = &src[oy * self.wo..(oy + 1) * self.wo];
                        for ox in ox0..ox1 {
                            dst[ox * self.stride + kx - self.pad] += s[ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_bias(op: &'static str, bias: Option<&Grid>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.len() != channels {
            return Err(Error::shape(
                op,
                format!("bias has {} entries, expected {channels}", b.len()),
            ));
        }
    }
    Ok(())
}

fn conv_geometry(x: &Grid, kernel: &Grid, stride: usize, pad: usize) -> Result<ConvGeom> {
    let [_, cin, h, w] = x.shape();
    let [cout, kcin, kh, kw] = kernel.shape();
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::shape(
            "conv2d",
            format!("kernel must have odd spatial size, got {kh}x{kw}"),
        ));
    }
    if kcin != cin {
        return Err(Error::shape(
            "conv2d",
            format!("input has {cin} channels but kernel [{cout},{kcin},{kh},{kw}] expects {kcin}"),
        ));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be positive"));
    }
    let (ho, wo) = match (conv_out_len(h, kh, stride, pad), conv_out_len(w, kw, stride, pad)) {
        (Some(ho), Some(wo)) => (ho, wo),
        _ => {
            return Err(Error::shape(
                "conv2d",
                format!("input {h}x{w} with pad {pad} is smaller than kernel {kh}x{kw}"),
            ))
        }
    };
    Ok(ConvGeom {
        cin,
        h,
        w,
        kh,
        kw,
        stride,
        pad,
        ho,
        wo,
    })
}

/// Dense 2D convolution (cross-correlation) with zero padding.
pub fn conv2d(x: &Grid, kernel: &Grid, bias: Option<&Grid>, stride: usize, pad: usize) -> Result<Grid> {
    let geom = conv_geometry(x, kernel, stride, pad)?;
    let cout = kernel.shape()[0];
    check_bias("conv2d", bias, cout)?;
    Ok(conv2d_forward(x, kernel, bias, geom).0)
}

fn conv2d_forward(
    x: &Grid,
    kernel: &Grid,
    bias: Option<&Grid>,
    g: ConvGeom,
) -> (Grid, Vec<Vec<f64>>) {
    let b = x.batch();
    let cout = kernel.shape()[0];
    let (k, p) = (g.rows(), g.cols());
    let mut out = Grid::zeros([b, cout, g.ho, g.wo]);
    let item_len = cout * p;
    let cols: Vec<Vec<f64>> = out
        .data_mut()
        .par_chunks_mut(item_len.max(1))
        .enumerate()
        .map(|(bi, dst)| {
            let src = x.item(bi);
            let cols = if g.is_pointwise() {
                Vec::new()
            } else {
                let mut c = vec![0.0; k * p];
                g.im2col(src, &mut c);
                c
            };
            let rhs = if g.is_pointwise() { src } else { &cols[..] };
            if let Some(bias) = bias {
                for (o, row) in dst.chunks_mut(p).enumerate() {
                    row.fill(bias.data()[o]);
                }
                gemm(cout, k, p, kernel.data(), false, rhs, false, 1.0, dst);
            } else {
                gemm(cout, k, p, kernel.data(), false, rhs, false, 0.0, dst);
            }
            cols
        })
        .collect();
    (out, cols)
}

fn conv2d_backward(
    gy: &Grid,
    x: &Grid,
    kernel: &Grid,
    cols: &[Vec<f64>],
    g: ConvGeom,
) -> (Grid, Grid, Grid) {
    let b = x.batch();
    let cout = kernel.shape()[0];
    let (k, p) = (g.rows(), g.cols());
    let mut gx = Grid::zeros(x.shape());
    let x_item = g.cin * g.h * g.w;
    let per_item: Vec<Vec<f64>> = gx
        .data_mut()
        .par_chunks_mut(x_item.max(1))
        .enumerate()
        .map(|(bi, gx_item)| {
            let gyi = gy.item(bi);
            let rhs = if g.is_pointwise() { x.item(bi) } else { &cols[bi][..] };
            let mut gw = vec![0.0; cout * k];
            gemm(cout, p, k, gyi, false, rhs, true, 0.0, &mut gw);
            if g.is_pointwise() {
                gemm(k, cout, p, kernel.data(), true, gyi, false, 0.0, gx_item);
            } else {
                let mut gcols = vec![0.0; k * p];
                gemm(k, cout, p, kernel.data(), true, gyi, false, 0.0, &mut gcols);
                g.col2im(&gcols, gx_item);
            }
            gw
        })
        .collect();
    let mut gw = Grid::zeros(kernel.shape());
    for item in &per_item {
        for (a, v) in gw.data_mut().iter_mut().zip(item) {
            *a += v;
        }
    }
    let mut gb = Grid::zeros([1, cout, 1, 1]);
    for bi in 0..b {
        for (o, row) in gy.item(bi).chunks(p).enumerate() {
            gb.data_mut()[o] += row.iter().sum::<f64>();
        }
    }
    (gx, gw, gb)
}

fn check_depthwise(x: &Grid, kernel: &Grid, pad: usize) -> Result<(usize, usize)> {
    let [_, c, h, w] = x.shape();
    let [kc, one, kh, kw] = kernel.shape();
    if kc != c || one != 1 {
        return Err(Error::shape(
            "depthwise_conv2d",
            format!("input has {c} channels, kernel is [{kc},{one},{kh},{kw}] (expected [{c},1,kh,kw])"),
        ));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::shape(
            "depthwise_conv2d",
            format!("kernel must have odd spatial size, got {kh}x{kw}"),
        ));
    }
    match (conv_out_len(h, kh, 1, pad), conv_out_len(w, kw, 1, pad)) {
        (Some(ho), Some(wo)) => Ok((ho, wo)),
        _ => Err(Error::shape(
            "depthwise_conv2d",
            format!("input {h}x{w} with pad {pad} is smaller than kernel {kh}x{kw}"),
        )),
    }
}

/// Per-channel convolution: output channel `c` depends only on input channel `c`.
pub fn depthwise_conv2d(x: &Grid, kernel: &Grid, bias: Option<&Grid>, pad: usize) -> Result<Grid> {
    let (ho, wo) = check_depthwise(x, kernel, pad)?;
    check_bias("depthwise_conv2d", bias, x.channels())?;
    Ok(depthwise_forward(x, kernel, bias, pad, ho, wo))
}

fn depthwise_forward(x: &Grid, kernel: &Grid, bias: Option<&Grid>, pad: usize, ho: usize, wo: usize) -> Grid {
    let [b, c, h, w] = x.shape();
    let [_, _, kh, kw] = kernel.shape();
    let mut out = Grid::zeros([b, c, ho, wo]);
    for bi in 0..b {
        for ci in 0..c {
            let src = x.plane(bi, ci);
            let k = &kernel.data()[ci * kh * kw..(ci + 1) * kh * kw];
            let dst = out.plane_mut(bi, ci);
            if let Some(bias) = bias {
                dst.fill(bias.data()[ci]);
            }
            for ky in 0..kh {
                let (oy0, oy1) = ConvGeom::valid(ho, h, ky, 1, pad);
                for kx in 0..kw {
                    let (ox0, ox1) = ConvGeom::valid(wo, w, kx, 1, pad);
                    let wv = k[ky * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy + ky - pad;
                        let s = &src[iy * w + ox0 + kx - pad..iy * w + ox1 + kx - pad];
                        let d = &mut dst[oy * wo + ox0..oy * wo + ox1];
                        for (dv, &sv) in d.iter_mut().zip(s) {
                            *dv += wv * sv;
                        }
                    }
                }
            }
        }
    }
    out
}

fn depthwise_backward(gy: &Grid, x: &Grid, kernel: &Grid, pad: usize) -> (Grid, Grid, Grid) {
    let [b, c, h, w] = x.shape();
    let [_, _, kh, kw] = kernel.shape();
    let [_, _, ho, wo] = gy.shape();
    let mut gx = Grid::zeros(x.shape());
    let mut gk = Grid::zeros(kernel.shape());
    let mut gb = Grid::zeros([1, c, 1, 1]);
    for bi in 0..b {
        for ci in 0..c {
            let src = x.plane(bi, ci);
            let g = gy.plane(bi, ci);
            gb.data_mut()[ci] += g.iter().sum::<f64>();
            let k = &kernel.data()[ci * kh * kw..(ci + 1) * kh * kw];
            let gxp = gx.plane_mut(bi, ci);
            for ky in 0..kh {
                let (oy0, oy1) = ConvGeom::valid(ho, h, ky, 1, pad);
                for kx in 0..kw {
                    let (ox0, ox1) = ConvGeom::valid(wo, w, kx, 1, pad);
                    let wv = k[ky * kw + kx];
                    let mut acc = 0.0;
                    for oy in oy0..oy1 {
                        let iy = oy + ky - pad;
                        let range = iy * w + ox0 + kx - pad..iy * w + ox1 + kx - pad;
                        let gs = &g[oy * wo + ox0..oy * wo + ox1];
                        for (&gv, &sv) in gs.iter().zip(&src[range.clone()]) {
                            acc += gv * sv;
                        }
                        for (d, &gv) in gxp[range].iter_mut().zip(gs) {
                            *d += wv * gv;
                        }
                    }
                    gk.data_mut()[(ci * kh + ky) * kw + kx] += acc;
                }
            }
        }
    }
    (gx, gk, gb)
}

fn check_linear(x: &Grid, weight: &Grid) -> Result<()> {
    let [cout, cin, one_h, one_w] = weight.shape();
    if one_h != 1 || one_w != 1 {
        return Err(Error::shape(
            "linear",
            format!("weight must be [Cout,Cin,1,1], got {:?}", weight.shape()),
        ));
    }
    if x.channels() != cin {
        return Err(Error::shape(
            "linear",
            format!("input has {} channels, weight [{cout},{cin}] expects {cin}", x.channels()),
        ));
    }
    Ok(())
}

/// Per-position projection over the channel axis: `y[.., h, w] = W·x[.., h, w] + b`.
///
/// `weight` is stored as `[Cout, Cin, 1, 1]`.
pub fn linear(x: &Grid, weight: &Grid, bias: Option<&Grid>) -> Result<Grid> {
    check_linear(x, weight)?;
    conv2d(x, weight, bias, 1, 0)
}

impl<'t> Var<'t> {
    pub fn conv2d(
        self,
        kernel: Var<'t>,
        bias: Option<Var<'t>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'t>> {
        let x = self.value();
        let k = kernel.value();
        let geom = conv_geometry(&x, &k, stride, pad)?;
        let bias_val = bias.map(|b| b.value());
        check_bias("conv2d", bias_val.as_deref(), k.shape()[0])?;
        let (out, cols) = conv2d_forward(&x, &k, bias_val.as_deref(), geom);
        let mut parents = vec![self, kernel];
        parents.extend(bias);
        let has_bias = bias.is_some();
        Ok(self.tape().op(out, &parents, move |gy| {
            let (gx, gw, gb) = conv2d_backward(gy, &x, &k, &cols, geom);
            let mut v = vec![Some(gx), Some(gw)];
            if has_bias {
                v.push(Some(gb));
            }
            v
        }))
    }

    pub fn depthwise_conv2d(self, kernel: Var<'t>, bias: Option<Var<'t>>, pad: usize) -> Result<Var<'t>> {
        let x = self.value();
        let k = kernel.value();
        let (ho, wo) = check_depthwise(&x, &k, pad)?;
        let bias_val = bias.map(|b| b.value());
        check_bias("depthwise_conv2d", bias_val.as_deref(), x.channels())?;
        let out = depthwise_forward(&x, &k, bias_val.as_deref(), pad, ho, wo);
        let mut parents = vec![self, kernel];
        parents.extend(bias);
        let has_bias = bias.is_some();
        Ok(self.tape().op(out, &parents, move |gy| {
            let (gx, gk, gb) = depthwise_backward(gy, &x, &k, pad);
            let mut v = vec![Some(gx), Some(gk)];
            if has_bias {
                v.push(Some(gb));
            }
            v
        }))
    }

    pub fn linear(self, weight: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
        check_linear(&self.value(), &weight.value())?;
        self.conv2d(weight, bias, 1, 0)
    }
}
