//! Pixel-difference convolutions as tap-pair difference operators.
//!
//! A branch is a list of taps over the 3×3 window. Each tap carries a
//! learned weight, a sampled offset and (except for the vanilla branch) a
//! reference offset:
//!
//! ```text
//! y(p) = Σ_n w_n · (x(p + a_n) − x(p + b_n))
//! ```
//!
//! Because every branch is linear in `x`, a set of branches collapses into
//! one 3×3 kernel `k[q] = Σ_{a_n = q} w_n − Σ_{b_n = q} w_n` with identical
//! output, borders included (zero padding everywhere).
//!
//! Tap conventions, offsets written `(dy, dx)`:
//!
//! | kind       | taps | reference of tap at `p`                          |
//! |------------|------|--------------------------------------------------|
//! | vanilla    | 9    | none                                             |
//! | central    | 9    | window center                                    |
//! | angular    | 8    | next clockwise neighbor on the outer ring        |
//! | horizontal | 6    | `p` shifted one column left (`dx ∈ {0, 1}`)      |
//! | vertical   | 6    | `p` shifted one row up (`dy ∈ {0, 1}`)           |

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{conv2d, depthwise_conv2d, Grid, Var};

/// Offset inside the 3×3 window, each component in `-1..=1`.
pub type Offset = (i8, i8);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PdcKind {
    Vanilla,
    Central,
    Angular,
    Horizontal,
    Vertical,
}

impl PdcKind {
    pub const ALL: [PdcKind; 5] = [
        PdcKind::Vanilla,
        PdcKind::Central,
        PdcKind::Angular,
        PdcKind::Horizontal,
        PdcKind::Vertical,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PdcKind::Vanilla => "vanilla",
            PdcKind::Central => "cdc",
            PdcKind::Angular => "adc",
            PdcKind::Horizontal => "hdc",
            PdcKind::Vertical => "vdc",
        }
    }
}

impl fmt::Display for PdcKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PdcKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PdcKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| Error::invalid("PdcKind", format!("unknown branch kind {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tap {
    pub sample: Offset,
    pub reference: Option<Offset>,
}

/// Clockwise ring starting at the top-left corner.
const RING: [Offset; 8] = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)];

fn in_window((dy, dx): Offset) -> bool {
    (-1..=1).contains(&dy) && (-1..=1).contains(&dx)
}

/// Row-major index of an offset in the 3×3 kernel.
fn slot((dy, dx): Offset) -> usize {
    ((dy + 1) * 3 + dx + 1) as usize
}

/// One branch: its kind and the ordered list of taps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PdcSpec {
    kind: PdcKind,
    taps: Vec<Tap>,
}

impl PdcSpec {
    /// Validates that every offset lies in the window and that references
    /// are present exactly for difference branches.
    pub fn new(kind: PdcKind, taps: Vec<Tap>) -> Result<Self> {
        for (i, t) in taps.iter().enumerate() {
            if !in_window(t.sample) || t.reference.is_some_and(|r| !in_window(r)) {
                return Err(Error::invalid(
                    "PdcSpec",
                    format!("tap {i} {t:?} lies outside the 3x3 window"),
                ));
            }
            match (kind, t.reference) {
                (PdcKind::Vanilla, Some(_)) => {
                    return Err(Error::invalid("PdcSpec", format!("vanilla tap {i} has a reference")))
                }
                (k, None) if k != PdcKind::Vanilla => {
                    return Err(Error::invalid("PdcSpec", format!("{k} tap {i} has no reference")))
                }
                _ => {}
            }
        }
        Ok(PdcSpec { kind, taps })
    }

    /// The standard tap set of `kind`.
    pub fn standard(kind: PdcKind) -> Self {
        let grid = || (-1..=1i8).flat_map(|dy| (-1..=1i8).map(move |dx| (dy, dx)));
        let taps: Vec<Tap> = match kind {
            PdcKind::Vanilla => grid().map(|p| Tap { sample: p, reference: None }).collect(),
            PdcKind::Central => grid()
                .map(|p| Tap { sample: p, reference: Some((0, 0)) })
                .collect(),
            PdcKind::Angular => (0..8)
                .map(|i| Tap { sample: RING[i], reference: Some(RING[(i + 1) % 8]) })
                .collect(),
            PdcKind::Horizontal => grid()
                .filter(|&(_, dx)| dx >= 0)
                .map(|(dy, dx)| Tap { sample: (dy, dx), reference: Some((dy, dx - 1)) })
                .collect(),
            PdcKind::Vertical => grid()
                .filter(|&(dy, _)| dy >= 0)
                .map(|(dy, dx)| Tap { sample: (dy, dx), reference: Some((dy - 1, dx)) })
                .collect(),
        };
        PdcSpec { kind, taps }
    }

    pub fn kind(&self) -> PdcKind {
        self.kind
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    pub fn num_taps(&self) -> usize {
        self.taps.len()
    }

    /// `(sample slot, reference slot)` per tap.
    fn slots(&self) -> Vec<(usize, Option<usize>)> {
        self.taps
            .iter()
            .map(|t| (slot(t.sample), t.reference.map(slot)))
            .collect()
    }

    fn check_weights(&self, weights: &Grid) -> Result<()> {
        let [_, _, one, t] = weights.shape();
        if one != 1 || t != self.num_taps() {
            return Err(Error::shape(
                "pdc",
                format!(
                    "{} weights must be (out, in, 1, {}), got {:?}",
                    self.kind,
                    self.num_taps(),
                    weights.shape()
                ),
            ));
        }
        Ok(())
    }

    /// Equivalent plain 3×3 kernel of per-tap `weights` shaped `(O, I, 1, T)`.
    pub fn to_kernel(&self, weights: &Grid) -> Result<Grid> {
        self.check_weights(weights)?;
        Ok(taps_to_kernel(&self.slots(), weights))
    }
}

fn taps_to_kernel(slots: &[(usize, Option<usize>)], w: &Grid) -> Grid {
    let [o, i, _, t] = w.shape();
    let mut k = Grid::zeros([o, i, 3, 3]);
    for (src, dst) in w.data().chunks_exact(t).zip(k.data_mut().chunks_exact_mut(9)) {
        for (&wv, &(a, b)) in src.iter().zip(slots) {
            dst[a] += wv;
            if let Some(b) = b {
                dst[b] -= wv;
            }
        }
    }
    k
}

fn kernel_to_taps(slots: &[(usize, Option<usize>)], g: &Grid, t: usize) -> Grid {
    let [o, i, _, _] = g.shape();
    let mut w = Grid::zeros([o, i, 1, t]);
    for (src, dst) in g.data().chunks_exact(9).zip(w.data_mut().chunks_exact_mut(t)) {
        for (d, &(a, b)) in dst.iter_mut().zip(slots) {
            *d = src[a] - b.map_or(0.0, |b| src[b]);
        }
    }
    w
}

impl<'t> Var<'t> {
    /// Differentiable [`PdcSpec::to_kernel`]; `self` holds the tap weights.
    pub fn taps_to_kernel(self, spec: &PdcSpec) -> Result<Var<'t>> {
        let w = self.value();
        spec.check_weights(&w)?;
        let slots = Arc::new(spec.slots());
        let t = spec.num_taps();
        let k = taps_to_kernel(&slots, &w);
        Ok(self
            .tape()
            .op(k, &[self], move |g| vec![Some(kernel_to_taps(&slots, g, t))]))
    }
}

/// Channel mixing implied by a weight shape for input with `channels` channels.
fn is_depthwise(channels: usize, weights: &Grid) -> Result<bool> {
    let [o, i, _, _] = weights.shape();
    if i == channels {
        Ok(false)
    } else if i == 1 && o == channels {
        Ok(true)
    } else {
        Err(Error::shape(
            "pdc",
            format!("weights {:?} fit neither a dense nor a depthwise conv over {channels} channels", weights.shape()),
        ))
    }
}

/// Direct evaluation of one branch with zero padding.
///
/// `weights` is `(O, C, 1, T)` for a dense branch or `(C, 1, 1, T)` for a
/// depthwise one.
pub fn pdc_forward(x: &Grid, spec: &PdcSpec, weights: &Grid) -> Result<Grid> {
    spec.check_weights(weights)?;
    let [b, c, h, w] = x.shape();
    let depthwise = is_depthwise(c, weights)?;
    let [o, i, _, t] = weights.shape();
    let (h_i, w_i) = (h as isize, w as isize);
    let sample = |plane: &[f64], y: isize, xx: isize, (dy, dx): Offset| -> f64 {
        let (yy, xq) = (y + dy as isize, xx + dx as isize);
        if yy < 0 || yy >= h_i || xq < 0 || xq >= w_i {
            0.0
        } else {
            plane[(yy * w_i + xq) as usize]
        }
    };
    let mut out = Grid::zeros([b, o, h, w]);
    for bi in 0..b {
        for oc in 0..o {
            let mut acc = vec![0.0; h * w];
            for ic in 0..i {
                let src_c = if depthwise { oc } else { ic };
                let plane = x.plane(bi, src_c);
                let wrow = &weights.data()[(oc * i + ic) * t..(oc * i + ic + 1) * t];
                for y in 0..h_i {
                    for xx in 0..w_i {
                        let mut s = 0.0;
                        for (wv, tap) in wrow.iter().zip(&spec.taps) {
                            let d = sample(plane, y, xx, tap.sample)
                                - tap.reference.map_or(0.0, |r| sample(plane, y, xx, r));
                            s += wv * d;
                        }
                        acc[(y * w_i + xx) as usize] += s;
                    }
                }
            }
            out.plane_mut(bi, oc).copy_from_slice(&acc);
        }
    }
    Ok(out)
}

/// Single 3×3 kernel equivalent to a set of branches.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedKernel {
    pub kernel: Grid,
}

impl FusedKernel {
    /// Apply with zero padding; dense or depthwise by the kernel's shape.
    pub fn apply(&self, x: &Grid, bias: Option<&Grid>) -> Result<Grid> {
        if is_depthwise(x.channels(), &self.kernel)? {
            depthwise_conv2d(x, &self.kernel, bias, 1)
        } else {
            conv2d(x, &self.kernel, bias, 1, 1)
        }
    }
}

/// Sum the equivalent kernels of every branch.
pub fn fuse(branches: &[(PdcSpec, Grid)]) -> Result<FusedKernel> {
    let Some((_, first)) = branches.first() else {
        return Err(Error::invalid("fuse", "no branches"));
    };
    let [o, i, _, _] = first.shape();
    let mut kernel = Grid::zeros([o, i, 3, 3]);
    for (spec, w) in branches {
        let [wo, wi, _, _] = w.shape();
        if (wo, wi) != (o, i) {
            return Err(Error::shape(
                "fuse",
                format!("{} branch has channel dims {wo}x{wi}, expected {o}x{i}", spec.kind),
            ));
        }
        kernel.add_assign(&spec.to_kernel(w)?);
    }
    Ok(FusedKernel { kernel })
}
