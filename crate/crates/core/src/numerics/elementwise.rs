//! Elementwise arithmetic, activations, reductions and channel bookkeeping.

use super::grid::{check_same_shape, Grid};
use super::tape::Var;
use crate::error::{Error, Result};

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu_scalar(x: f64) -> f64 {
    x * sigmoid_scalar(x)
}

#[inline]
pub fn softplus_scalar(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: &Grid) -> Grid {
    x.map(sigmoid_scalar)
}

pub fn silu(x: &Grid) -> Grid {
    x.map(silu_scalar)
}

impl<'t> Var<'t> {
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        check_same_shape("add", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x + y);
        Ok(self
            .tape()
            .op(out, &[self, other], |g| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        check_same_shape("sub", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x - y);
        Ok(self.tape().op(out, &[self, other], |g| {
            vec![Some(g.clone()), Some(g.map(|v| -v))]
        }))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        check_same_shape("mul", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x * y);
        Ok(self.tape().op(out, &[self, other], move |g| {
            vec![Some(g.zip_map(&b, |gv, bv| gv * bv)), Some(g.zip_map(&a, |gv, av| gv * av))]
        }))
    }

    pub fn scale(self, alpha: f64) -> Var<'t> {
        let out = self.value().map(|v| alpha * v);
        self.tape()
            .op(out, &[self], move |g| vec![Some(g.map(|v| alpha * v))])
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let out = self.value().map(|v| v + c);
        self.tape().op(out, &[self], |g| vec![Some(g.clone())])
    }

    pub fn exp(self) -> Var<'t> {
        let out = self.value().map(f64::exp);
        let saved = out.clone();
        self.tape()
            .op(out, &[self], move |g| vec![Some(g.zip_map(&saved, |gv, e| gv * e))])
    }

    pub fn sigmoid(self) -> Var<'t> {
        let out = sigmoid(&self.value());
        let saved = out.clone();
        self.tape().op(out, &[self], move |g| {
            vec![Some(g.zip_map(&saved, |gv, s| gv * s * (1.0 - s)))]
        })
    }

    pub fn silu(self) -> Var<'t> {
        let x = self.value();
        let out = silu(&x);
        self.tape().op(out, &[self], move |g| {
            vec![Some(g.zip_map(&x, |gv, xv| {
                let s = sigmoid_scalar(xv);
                gv * s * (1.0 + xv * (1.0 - s))
            }))]
        })
    }

    pub fn softplus(self) -> Var<'t> {
        let x = self.value();
        let out = x.map(softplus_scalar);
        self.tape().op(out, &[self], move |g| {
            vec![Some(g.zip_map(&x, |gv, xv| gv * sigmoid_scalar(xv)))]
        })
    }

    /// Sum of all elements as a scalar node.
    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape();
        let out = Grid::scalar(x.sum());
        self.tape()
            .op(out, &[self], move |g| vec![Some(Grid::full(shape, g.data()[0]))])
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Weighted sum `Σ w·x` with constant weights, as a scalar node.
    pub fn dot_const(self, weights: &Grid) -> Result<Var<'t>> {
        let x = self.value();
        check_same_shape("dot_const", &x, weights)?;
        let value: f64 = x.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        let w = weights.clone();
        Ok(self
            .tape()
            .op(Grid::scalar(value), &[self], move |g| vec![Some(w.map(|v| v * g.data()[0]))]))
    }

    /// Channels `[start, start + len)`.
    pub fn narrow_channels(self, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let [b, c, h, w] = x.shape();
        if start + len > c {
            return Err(Error::shape(
                "narrow_channels",
                format!("range {start}..{} exceeds {c} channels", start + len),
            ));
        }
        let plane = h * w;
        let mut out = Grid::zeros([b, len, h, w]);
        for bi in 0..b {
            let src = &x.item(bi)[start * plane..(start + len) * plane];
            out.item_mut(bi).copy_from_slice(src);
        }
        Ok(self.tape().op(out, &[self], move |g| {
            let mut gx = Grid::zeros([b, c, h, w]);
            for bi in 0..b {
                gx.item_mut(bi)[start * plane..(start + len) * plane]
                    .copy_from_slice(g.item(bi));
            }
            vec![Some(gx)]
        }))
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_channels", "no inputs"))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let [b, _, h, w] = values[0].shape();
        let mut widths = Vec::with_capacity(parts.len());
        for v in &values {
            let [vb, vc, vh, vw] = v.shape();
            if (vb, vh, vw) != (b, h, w) {
                return Err(Error::shape(
                    "concat_channels",
                    format!("{:?} vs {:?}", v.shape(), values[0].shape()),
                ));
            }
            widths.push(vc);
        }
        let total: usize = widths.iter().sum();
        let plane = h * w;
        let mut out = Grid::zeros([b, total, h, w]);
        for bi in 0..b {
            let mut offset = 0;
            let dst = out.item_mut(bi);
            for v in &values {
                let src = v.item(bi);
                dst[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(first.tape().op(out, parts, move |g| {
            let mut offset = 0;
            widths
                .iter()
                .map(|&c| {
                    let mut part = Grid::zeros([b, c, h, w]);
                    for bi in 0..b {
                        part.item_mut(bi)
                            .copy_from_slice(&g.item(bi)[offset * plane..(offset + c) * plane]);
                    }
                    offset += c;
                    Some(part)
                })
                .collect()
        }))
    }

    /// Tile the channel block `times` times: `[x, x, ..., x]`.
    pub fn repeat_channels(self, times: usize) -> Var<'t> {
        let x = self.value();
        let [b, c, h, w] = x.shape();
        let n = c * h * w;
        let mut out = Grid::zeros([b, c * times, h, w]);
        for bi in 0..b {
            for k in 0..times {
                out.item_mut(bi)[k * n..(k + 1) * n].copy_from_slice(x.item(bi));
            }
        }
        self.tape().op(out, &[self], move |g| {
            let mut gx = Grid::zeros([b, c, h, w]);
            for bi in 0..b {
                let dst = gx.item_mut(bi);
                for k in 0..times {
                    for (d, s) in dst.iter_mut().zip(&g.item(bi)[k * n..(k + 1) * n]) {
                        *d += s;
                    }
                }
            }
            vec![Some(gx)]
        })
    }
}
