use super::grid::Grid;
use super::tape::Var;
use crate::error::{Error, Result};

/// `(B, r²C, H, W) -> (B, C, rH, rW)` with
/// `out[b, c, r*h + i, r*w + j] = in[b, c*r² + i*r + j, h, w]`.
pub fn pixel_shuffle(x: &Grid, r: usize) -> Result<Grid> {
    let [b, c, h, w] = x.shape();
    if r == 0 || c % (r * r) != 0 {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("{c} channels not divisible by r²={}", r * r),
        ));
    }
    let co = c / (r * r);
    let mut out = Grid::zeros([b, co, h * r, w * r]);
    let wo = w * r;
    for bi in 0..b {
        for ci in 0..co {
            let dst = out.plane_mut(bi, ci);
            for i in 0..r {
                for j in 0..r {
                    let src = x.plane(bi, ci * r * r + i * r + j);
                    for hi in 0..h {
                        let row = (r * hi + i) * wo;
                        for wi in 0..w {
                            dst[row + r * wi + j] = src[hi * w + wi];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(x: &Grid, r: usize) -> Result<Grid> {
    let [b, c, h, w] = x.shape();
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(Error::shape(
            "pixel_unshuffle",
            format!("spatial size {h}x{w} not divisible by {r}"),
        ));
    }
    let (ho, wo) = (h / r, w / r);
    let mut out = Grid::zeros([b, c * r * r, ho, wo]);
    for bi in 0..b {
        for ci in 0..c {
            let src = x.plane(bi, ci);
            for i in 0..r {
                for j in 0..r {
                    let dst = out.plane_mut(bi, ci * r * r + i * r + j);
                    for hi in 0..ho {
                        for wi in 0..wo {
                            dst[hi * wo + wi] = src[(r * hi + i) * w + r * wi + j];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

impl<'t> Var<'t> {
    pub fn pixel_shuffle(self, r: usize) -> Result<Var<'t>> {
        let out = pixel_shuffle(&self.value(), r)?;
        Ok(self.tape().op(out, &[self], move |g| {
            vec![Some(pixel_unshuffle(g, r).expect("shape fixed by forward"))]
        }))
    }

    pub fn pixel_unshuffle(self, r: usize) -> Result<Var<'t>> {
        let out = pixel_unshuffle(&self.value(), r)?;
        Ok(self.tape().op(out, &[self], move |g| {
            vec![Some(pixel_shuffle(g, r).expect("shape fixed by forward"))]
        }))
    }
}
