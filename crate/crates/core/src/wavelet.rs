//! Single-level orthonormal Haar analysis and synthesis.
//!
//! Band naming follows (height filter, width filter). For every 2×2 block
//! `[[a, b], [c, d]]`:
//!
//! ```text
//! LL = (a + b + c + d) / 2      LH = (a - b + c - d) / 2
//! HL = (a + b - c - d) / 2      HH = (a - b - c + d) / 2
//! ```
//!
//! so LH is low-pass along height and high-pass along width. The transform is
//! orthonormal: its adjoint is its inverse, which is also how gradients flow
//! through it.

use crate::error::{Error, Result};
use crate::numerics::{Grid, Var};

/// The four half-resolution sub-bands of one Haar level.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletBands {
    pub ll: Grid,
    pub lh: Grid,
    pub hl: Grid,
    pub hh: Grid,
}

impl WaveletBands {
    pub fn shape(&self) -> [usize; 4] {
        self.ll.shape()
    }

    fn check(&self) -> Result<()> {
        let s = self.ll.shape();
        for (name, g) in [("LH", &self.lh), ("HL", &self.hl), ("HH", &self.hh)] {
            if g.shape() != s {
                return Err(Error::shape(
                    "haar_idwt",
                    format!("band {name} is {:?} but LL is {s:?}", g.shape()),
                ));
            }
        }
        Ok(())
    }

    /// Total energy across all bands.
    pub fn energy(&self) -> f64 {
        self.ll.sum_squares() + self.lh.sum_squares() + self.hl.sum_squares() + self.hh.sum_squares()
    }

    /// Channel-concatenated `[LL | LH | HL | HH]`, shape `(B, 4C, H/2, W/2)`.
    pub fn to_stacked(&self) -> Grid {
        let [b, c, h, w] = self.shape();
        let mut out = Grid::zeros([b, 4 * c, h, w]);
        let n = c * h * w;
        for bi in 0..b {
            let dst = out.item_mut(bi);
            for (k, band) in [&self.ll, &self.lh, &self.hl, &self.hh].iter().enumerate() {
                dst[k * n..(k + 1) * n].copy_from_slice(band.item(bi));
            }
        }
        out
    }

    pub fn from_stacked(x: &Grid) -> Result<Self> {
        let [b, c4, h, w] = x.shape();
        if c4 % 4 != 0 {
            return Err(Error::shape(
                "haar_idwt",
                format!("stacked bands need a multiple of 4 channels, got {c4}"),
            ));
        }
        let c = c4 / 4;
        let n = c * h * w;
        let mut bands: Vec<Grid> = (0..4).map(|_| Grid::zeros([b, c, h, w])).collect();
        for bi in 0..b {
            for (k, band) in bands.iter_mut().enumerate() {
                band.item_mut(bi).copy_from_slice(&x.item(bi)[k * n..(k + 1) * n]);
            }
        }
        let hh = bands.pop().unwrap();
        let hl = bands.pop().unwrap();
        let lh = bands.pop().unwrap();
        let ll = bands.pop().unwrap();
        Ok(WaveletBands { ll, lh, hl, hh })
    }
}

fn check_even(x: &Grid) -> Result<()> {
    let [_, _, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "haar_dwt",
            format!("spatial size {h}x{w} must be even; pad with pad_to_even (edge replication) first"),
        ));
    }
    Ok(())
}

/// Stacked analysis: `(B, C, H, W) -> (B, 4C, H/2, W/2)` as `[LL|LH|HL|HH]`.
fn dwt_stacked(x: &Grid) -> Grid {
    let [b, c, h, w] = x.shape();
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Grid::zeros([b, 4 * c, ho, wo]);
    for bi in 0..b {
        for ci in 0..c {
            let src = x.plane(bi, ci);
            let mut bands = [vec![0.0; ho * wo], vec![0.0; ho * wo], vec![0.0; ho * wo], vec![0.0; ho * wo]];
            for i in 0..ho {
                let top = &src[2 * i * w..(2 * i + 1) * w];
                let bot = &src[(2 * i + 1) * w..(2 * i + 2) * w];
                for j in 0..wo {
                    let (a, bb, cc, d) = (top[2 * j], top[2 * j + 1], bot[2 * j], bot[2 * j + 1]);
                    let k = i * wo + j;
                    bands[0][k] = 0.5 * (a + bb + cc + d);
                    bands[1][k] = 0.5 * (a - bb + cc - d);
                    bands[2][k] = 0.5 * (a + bb - cc - d);
                    bands[3][k] = 0.5 * (a - bb - cc + d);
                }
            }
            for (k, band) in bands.iter().enumerate() {
                out.plane_mut(bi, k * c + ci).copy_from_slice(band);
            }
        }
    }
    out
}

/// Stacked synthesis: `(B, 4C, h, w) -> (B, C, 2h, 2w)`.
fn idwt_stacked(x: &Grid) -> Grid {
    let [b, c4, h, w] = x.shape();
    let c = c4 / 4;
    let wo = 2 * w;
    let mut out = Grid::zeros([b, c, 2 * h, wo]);
    for bi in 0..b {
        for ci in 0..c {
            let ll = x.plane(bi, ci);
            let lh = x.plane(bi, c + ci);
            let hl = x.plane(bi, 2 * c + ci);
            let hh = x.plane(bi, 3 * c + ci);
            let dst = out.plane_mut(bi, ci);
            for i in 0..h {
                for j in 0..w {
                    let k = i * w + j;
                    let (s, t, u, v) = (ll[k], lh[k], hl[k], hh[k]);
                    dst[2 * i * wo + 2 * j] = 0.5 * (s + t + u + v);
                    dst[2 * i * wo + 2 * j + 1] = 0.5 * (s - t + u - v);
                    dst[(2 * i + 1) * wo + 2 * j] = 0.5 * (s + t - u - v);
                    dst[(2 * i + 1) * wo + 2 * j + 1] = 0.5 * (s - t - u + v);
                }
            }
        }
    }
    out
}

pub fn haar_dwt(x: &Grid) -> Result<WaveletBands> {
    check_even(x)?;
    WaveletBands::from_stacked(&dwt_stacked(x))
}

pub fn haar_idwt(bands: &WaveletBands) -> Result<Grid> {
    bands.check()?;
    Ok(idwt_stacked(&bands.to_stacked()))
}

/// Replicate the last row and/or column so both spatial extents are even.
pub fn pad_to_even(x: &Grid) -> Grid {
    let [b, c, h, w] = x.shape();
    let (h2, w2) = (h + h % 2, w + w % 2);
    if (h2, w2) == (h, w) {
        return x.clone();
    }
    Grid::from_fn([b, c, h2, w2], |[bi, ci, hi, wi]| {
        x.at(bi, ci, hi.min(h - 1), wi.min(w - 1))
    })
}

impl<'t> Var<'t> {
    /// Haar analysis producing stacked `[LL|LH|HL|HH]` channels.
    pub fn haar_dwt(self) -> Result<Var<'t>> {
        let x = self.value();
        check_even(&x)?;
        let out = dwt_stacked(&x);
        Ok(self.tape().op(out, &[self], |g| vec![Some(idwt_stacked(g))]))
    }

    /// Haar synthesis from stacked `[LL|LH|HL|HH]` channels.
    pub fn haar_idwt(self) -> Result<Var<'t>> {
        let x = self.value();
        if x.channels() % 4 != 0 {
            return Err(Error::shape(
                "haar_idwt",
                format!("stacked bands need a multiple of 4 channels, got {}", x.channels()),
            ));
        }
        let out = idwt_stacked(&x);
        Ok(self.tape().op(out, &[self], |g| vec![Some(dwt_stacked(g))]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{gradcheck, GradcheckOptions};
    use crate::numerics::ParamStore;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn block() -> Grid {
        Grid::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn constant_field() {
        let bands = haar_dwt(&Grid::full([1, 1, 4, 4], 1.0)).unwrap();
        assert!(bands.ll.data().iter().all(|&v| v == 2.0));
        for band in [&bands.lh, &bands.hl, &bands.hh] {
            assert!(band.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn block_closed_form() {
        let b = haar_dwt(&block()).unwrap();
        assert_eq!(
            (b.ll.data()[0], b.lh.data()[0], b.hl.data()[0], b.hh.data()[0]),
            (5.0, -1.0, -2.0, 0.0)
        );
    }

    #[test]
    fn block_inverse() {
        let bands = WaveletBands {
            ll: Grid::full([1, 1, 1, 1], 5.0),
            lh: Grid::full([1, 1, 1, 1], -1.0),
            hl: Grid::full([1, 1, 1, 1], -2.0),
            hh: Grid::full([1, 1, 1, 1], 0.0),
        };
        assert_eq!(haar_idwt(&bands).unwrap(), block());
    }

    #[test]
    fn constant_inverse() {
        let z = Grid::zeros([1, 1, 2, 2]);
        let bands = WaveletBands {
            ll: Grid::full([1, 1, 2, 2], 2.0),
            lh: z.clone(),
            hl: z.clone(),
            hh: z,
        };
        assert!(haar_idwt(&bands).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn odd_input_rejected_with_hint() {
        let err = haar_dwt(&Grid::zeros([1, 1, 3, 4])).unwrap_err();
        assert!(err.to_string().contains("pad_to_even"));
        let padded = pad_to_even(&Grid::zeros([1, 1, 3, 5]));
        assert_eq!(padded.shape(), [1, 1, 4, 6]);
    }

    #[test]
    fn mismatched_bands_rejected() {
        let mut b = haar_dwt(&Grid::zeros([1, 1, 4, 4])).unwrap();
        b.hh = Grid::zeros([1, 1, 1, 2]);
        assert!(haar_idwt(&b).is_err());
    }

    #[test]
    fn round_trip_and_energy_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let shape = [
                rng.gen_range(1..3),
                rng.gen_range(1..4),
                2 * rng.gen_range(1..9),
                2 * rng.gen_range(1..9),
            ];
            let x = Grid::from_fn(shape, |_| rng.gen_range(-10.0..10.0));
            let bands = haar_dwt(&x).unwrap();
            let back = haar_idwt(&bands).unwrap();
            assert!(back.max_abs_diff(&x) < 1e-12);
            assert!((bands.energy() - x.sum_squares()).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Grid::from_fn([1, 2, 4, 6], |_| rng.gen_range(-1.0..1.0));
            let y = Grid::from_fn([1, 2, 4, 6], |_| rng.gen_range(-1.0..1.0));
            let lhs = haar_dwt(&x.zip_map(&y, |p, q| a * p + b * q)).unwrap().to_stacked();
            let dx = haar_dwt(&x).unwrap().to_stacked();
            let dy = haar_dwt(&y).unwrap().to_stacked();
            prop_assert!(lhs.max_abs_diff(&dx.zip_map(&dy, |p, q| a * p + b * q)) < 1e-12);
        }
    }

    #[test]
    fn dwt_and_idwt_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for shape in [[1, 1, 2, 2], [2, 3, 4, 6], [1, 2, 8, 4]] {
            let mut ps = ParamStore::new();
            ps.add("x", Grid::from_fn(shape, |_| rng.gen_range(-1.0..1.0))).unwrap();
            let w = Grid::from_fn([shape[0], 4 * shape[1], shape[2] / 2, shape[3] / 2], |_| rng.gen_range(-1.0..1.0));
            let report = gradcheck(
                &ps,
                |t, p| {
                    let x = t.param(p, p.ids().next().unwrap());
                    let d = x.haar_dwt()?;
                    let sq = d.mul(d)?;
                    let back = sq.haar_idwt()?.haar_dwt()?;
                    back.dot_const(&w)
                },
                &GradcheckOptions::default(),
            )
            .unwrap();
            assert!(report.max_rel_err() < 1e-4, "{report:?}");
        }
    }
}
