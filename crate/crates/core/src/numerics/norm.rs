use super::grid::Grid;
use super::tape::Var;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-6;

struct NormStats {
    xhat: Grid,
    /// `1 / sqrt(var + eps)` per (batch, position).
    inv_std: Vec<f64>,
}

fn normalize(x: &Grid, eps: f64) -> NormStats {
    let [b, c, h, w] = x.shape();
    let hw = h * w;
    let mut xhat = Grid::zeros(x.shape());
    let mut inv_std = vec![0.0; b * hw];
    let mut mean = vec![0.0; hw];
    let mut var = vec![0.0; hw];
    for bi in 0..b {
        mean.fill(0.0);
        var.fill(0.0);
        for ci in 0..c {
            for (m, &v) in mean.iter_mut().zip(x.plane(bi, ci)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= c as f64);
        for ci in 0..c {
            for ((s, &v), &m) in var.iter_mut().zip(x.plane(bi, ci)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv = &mut inv_std[bi * hw..(bi + 1) * hw];
        for (i, s) in inv.iter_mut().zip(&var) {
            *i = 1.0 / (s / c as f64 + eps).sqrt();
        }
        for ci in 0..c {
            let src = x.plane(bi, ci);
            let dst = xhat.plane_mut(bi, ci);
            for p in 0..hw {
                dst[p] = (src[p] - mean[p]) * inv[p];
            }
        }
    }
    NormStats { xhat, inv_std }
}

fn check(x: &Grid, gamma: &Grid, beta: &Grid, eps: f64) -> Result<()> {
    let c = x.channels();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(
            "layer_norm",
            format!(
                "input has {c} channels, gamma {} and beta {} entries",
                gamma.len(),
                beta.len()
            ),
        ));
    }
    if eps <= 0.0 {
        return Err(Error::invalid("layer_norm", "eps must be positive"));
    }
    Ok(())
}

fn affine(stats: &NormStats, gamma: &Grid, beta: &Grid) -> Grid {
    let [b, c, _, _] = stats.xhat.shape();
    let mut out = stats.xhat.clone();
    for bi in 0..b {
        for ci in 0..c {
            let (g, be) = (gamma.data()[ci], beta.data()[ci]);
            out.plane_mut(bi, ci).iter_mut().for_each(|v| *v = *v * g + be);
        }
    }
    out
}

/// Normalize over the channel axis at every spatial position, then apply a
/// per-channel affine map.
pub fn layer_norm(x: &Grid, gamma: &Grid, beta: &Grid, eps: f64) -> Result<Grid> {
    check(x, gamma, beta, eps)?;
    Ok(affine(&normalize(x, eps), gamma, beta))
}

impl<'t> Var<'t> {
    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let x = self.value();
        let (gv, bv) = (gamma.value(), beta.value());
        check(&x, &gv, &bv, eps)?;
        let stats = normalize(&x, eps);
        let out = affine(&stats, &gv, &bv);
        Ok(self.tape().op(out, &[self, gamma, beta], move |gy| {
            let [b, c, h, w] = gy.shape();
            let hw = h * w;
            let mut gx = Grid::zeros(gy.shape());
            let mut ggamma = Grid::zeros(gv.shape());
            let mut gbeta = Grid::zeros(bv.shape());
            let mut sum_d = vec![0.0; hw];
            let mut sum_dx = vec![0.0; hw];
            for bi in 0..b {
                sum_d.fill(0.0);
                sum_dx.fill(0.0);
                for ci in 0..c {
                    let g = gy.plane(bi, ci);
                    let xh = stats.xhat.plane(bi, ci);
                    let gam = gv.data()[ci];
                    let mut acc_g = 0.0;
                    let mut acc_b = 0.0;
                    for p in 0..hw {
                        acc_g += g[p] * xh[p];
                        acc_b += g[p];
                        let d = g[p] * gam;
                        sum_d[p] += d;
                        sum_dx[p] += d * xh[p];
                    }
                    ggamma.data_mut()[ci] += acc_g;
                    gbeta.data_mut()[ci] += acc_b;
                }
                let inv = &stats.inv_std[bi * hw..(bi + 1) * hw];
                let cf = c as f64;
                for ci in 0..c {
                    let g = gy.plane(bi, ci);
                    let xh = stats.xhat.plane(bi, ci);
                    let gam = gv.data()[ci];
                    let dst = gx.plane_mut(bi, ci);
                    for p in 0..hw {
                        let d = g[p] * gam;
                        dst[p] = inv[p] / cf * (cf * d - sum_d[p] - xh[p] * sum_dx[p]);
                    }
                }
            }
            vec![Some(gx), Some(ggamma), Some(gbeta)]
        }))
    }
}
