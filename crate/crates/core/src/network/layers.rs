//! Parameterized building blocks. Each layer owns [`ParamId`]s into the
//! model's store and builds its forward pass on a tape.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{Grid, ParamId, ParamStore, Shape, Tape, Var, LAYER_NORM_EPS};
use crate::pdconv::{PdcKind, PdcSpec};
use crate::sscan::{a_log_init, ssm_2d_var, step_bias_init, xavier_uniform, Direction, SsmVars};

/// Kaiming gain used for every convolution (fan-in mode): `1/√E[silu(z)²]`
/// for `z ~ N(0, 1)`, so a SiLU after the layer keeps unit second moment.
pub const KAIMING_GAIN: f64 = 1.676_532_470_331_091;

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Kaiming { fan_in: usize },
    Xavier,
    Zeros,
    Ones,
    StateLog,
    StepBias,
}

enum Source {
    Random(ChaCha8Rng),
    Bind(BTreeMap<String, Grid>),
}

/// Registers parameters either from fresh initialization or from a named set.
pub struct Builder {
    store: ParamStore,
    source: Source,
}

impl Builder {
    pub fn random(rng: ChaCha8Rng) -> Self {
        Builder {
            store: ParamStore::new(),
            source: Source::Random(rng),
        }
    }

    pub fn bind(named: impl IntoIterator<Item = (String, Grid)>) -> Self {
        Builder {
            store: ParamStore::new(),
            source: Source::Bind(named.into_iter().collect()),
        }
    }

    pub fn param(&mut self, name: String, shape: Shape, init: Init) -> Result<ParamId> {
        let value = match &mut self.source {
            Source::Random(rng) => match init {
                Init::Kaiming { fan_in } => {
                    let normal = Normal::new(0.0, KAIMING_GAIN / (fan_in as f64).sqrt())
                        .map_err(|e| Error::invalid("init", e.to_string()))?;
                    Grid::from_fn(shape, |_| normal.sample(rng))
                }
                Init::Xavier => xavier_uniform(shape, rng),
                Init::Zeros => Grid::zeros(shape),
                Init::Ones => Grid::full(shape, 1.0),
                Init::StateLog => a_log_init(shape[0], shape[1]),
                Init::StepBias => step_bias_init(shape[1], rng),
            },
            Source::Bind(map) => {
                let g = map.remove(&name).ok_or_else(|| Error::Malformed {
                    kind: "parameter set",
                    detail: format!("missing parameter {name:?}"),
                })?;
                if g.shape() != shape {
                    return Err(Error::Malformed {
                        kind: "parameter set",
                        detail: format!("{name} has shape {:?}, expected {shape:?}", g.shape()),
                    });
                }
                g
            }
        };
        self.store.add(name, value)
    }

    pub fn finish(self) -> Result<ParamStore> {
        if let Source::Bind(map) = &self.source {
            if let Some(name) = map.keys().next() {
                return Err(Error::Malformed {
                    kind: "parameter set",
                    detail: format!("unexpected parameter {name:?}"),
                });
            }
        }
        Ok(self.store)
    }
}

/// Parameter lookups on a tape.
#[derive(Clone, Copy)]
pub struct Ctx<'t, 's> {
    pub tape: &'t Tape,
    pub store: &'s ParamStore,
}

impl<'t> Ctx<'t, '_> {
    pub fn p(&self, id: ParamId) -> Var<'t> {
        self.tape.param(self.store, id)
    }
}

/// Dense 3×3 convolution, stride 1, zero padding 1.
#[derive(Clone, Debug)]
pub struct Conv3 {
    pub w: ParamId,
    pub b: ParamId,
}

impl Conv3 {
    pub fn build(bd: &mut Builder, prefix: &str, cin: usize, cout: usize) -> Result<Self> {
        Self::build_with(bd, prefix, cin, cout, Init::Kaiming { fan_in: 9 * cin })
    }

    pub fn build_with(bd: &mut Builder, prefix: &str, cin: usize, cout: usize, init: Init) -> Result<Self> {
        Ok(Conv3 {
            w: bd.param(format!("{prefix}.w"), [cout, cin, 3, 3], init)?,
            b: bd.param(format!("{prefix}.b"), [1, cout, 1, 1], Init::Zeros)?,
        })
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        x.conv2d(cx.p(self.w), Some(cx.p(self.b)), 1, 1)
    }
}

/// Depthwise 3×3 convolution with zero padding 1.
#[derive(Clone, Debug)]
pub struct DwConv3 {
    pub w: ParamId,
    pub b: ParamId,
}

impl DwConv3 {
    pub fn build(bd: &mut Builder, prefix: &str, c: usize) -> Result<Self> {
        Ok(DwConv3 {
            w: bd.param(format!("{prefix}.w"), [c, 1, 3, 3], Init::Kaiming { fan_in: 9 })?,
            b: bd.param(format!("{prefix}.b"), [1, c, 1, 1], Init::Zeros)?,
        })
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        x.depthwise_conv2d(cx.p(self.w), Some(cx.p(self.b)), 1)
    }
}

/// Per-position fully-connected layer.
#[derive(Clone, Debug)]
pub struct Fc {
    pub w: ParamId,
    pub b: ParamId,
}

impl Fc {
    pub fn build(bd: &mut Builder, prefix: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(Fc {
            w: bd.param(format!("{prefix}.w"), [cout, cin, 1, 1], Init::Xavier)?,
            b: bd.param(format!("{prefix}.b"), [1, cout, 1, 1], Init::Zeros)?,
        })
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        x.linear(cx.p(self.w), Some(cx.p(self.b)))
    }
}

/// Layer norm across channels at every position.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn build(bd: &mut Builder, prefix: &str, c: usize) -> Result<Self> {
        Ok(Norm {
            gamma: bd.param(format!("{prefix}.gamma"), [1, c, 1, 1], Init::Ones)?,
            beta: bd.param(format!("{prefix}.beta"), [1, c, 1, 1], Init::Zeros)?,
        })
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(cx.p(self.gamma), cx.p(self.beta), LAYER_NORM_EPS)
    }
}

/// Parameters of one scan direction.
#[derive(Clone, Debug)]
pub struct ScanDir {
    pub a_log: ParamId,
    pub d: ParamId,
    pub w_b: ParamId,
    pub w_c: ParamId,
    pub w_delta: ParamId,
    pub b_delta: ParamId,
}

impl ScanDir {
    pub fn build(bd: &mut Builder, prefix: &str, e: usize, n: usize) -> Result<Self> {
        Ok(ScanDir {
            a_log: bd.param(format!("{prefix}.a_log"), [e, n, 1, 1], Init::StateLog)?,
            d: bd.param(format!("{prefix}.d"), [1, e, 1, 1], Init::Ones)?,
            w_b: bd.param(format!("{prefix}.w_b"), [n, e, 1, 1], Init::Xavier)?,
            w_c: bd.param(format!("{prefix}.w_c"), [n, e, 1, 1], Init::Xavier)?,
            w_delta: bd.param(format!("{prefix}.w_delta"), [e, e, 1, 1], Init::Xavier)?,
            b_delta: bd.param(format!("{prefix}.b_delta"), [1, e, 1, 1], Init::StepBias)?,
        })
    }

    pub fn vars<'t>(&self, cx: &Ctx<'t, '_>) -> SsmVars<'t> {
        SsmVars {
            a_log: cx.p(self.a_log),
            d: cx.p(self.d),
            w_b: cx.p(self.w_b),
            w_c: cx.p(self.w_c),
            w_delta: cx.p(self.w_delta),
            b_delta: cx.p(self.b_delta),
        }
    }
}

/// `LN → DW3×3 → σ(Z₁) ⊙ Z₂ → FC(C/2 → C)`.
#[derive(Clone, Debug)]
pub struct GatedFfn {
    pub norm: Norm,
    pub dw: DwConv3,
    pub out: Fc,
}

impl GatedFfn {
    pub fn build(bd: &mut Builder, prefix: &str, c: usize) -> Result<Self> {
        if c % 2 != 0 {
            return Err(Error::invalid("gated_ffn", format!("channel count {c} is odd")));
        }
        Ok(GatedFfn {
            norm: Norm::build(bd, &format!("{prefix}.norm"), c)?,
            dw: DwConv3::build(bd, &format!("{prefix}.dw"), c)?,
            out: Fc::build(bd, &format!("{prefix}.out"), c / 2, c)?,
        })
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let half = x.shape()[1] / 2;
        let y = self.dw.forward(cx, self.norm.forward(cx, x)?)?;
        let gate = y.narrow_channels(0, half)?.sigmoid();
        let value = y.narrow_channels(half, half)?;
        self.out.forward(cx, gate.mul(value)?)
    }
}

/// Two-branch state-space unit:
/// `FC(E→C)( LN(SSM2D(SiLU(DW(FC(x))))) ⊙ SiLU(FC(x)) )`.
#[derive(Clone, Debug)]
pub struct Vssm {
    pub expand: Fc,
    pub dw: DwConv3,
    pub scans: [ScanDir; 4],
    pub norm: Norm,
    pub gate: Fc,
    pub reduce: Fc,
}

impl Vssm {
    pub fn build(bd: &mut Builder, prefix: &str, c: usize, e: usize, n: usize) -> Result<Self> {
        let expand = Fc::build(bd, &format!("{prefix}.expand"), c, e)?;
        let dw = DwConv3::build(bd, &format!("{prefix}.dw"), e)?;
        let mut scans = Vec::with_capacity(4);
        for dir in Direction::ALL {
            scans.push(ScanDir::build(bd, &format!("{prefix}.scan.{}", dir.label()), e, n)?);
        }
        Ok(Vssm {
            expand,
            dw,
            scans: scans.try_into().expect("four directions"),
            norm: Norm::build(bd, &format!("{prefix}.norm"), e)?,
            gate: Fc::build(bd, &format!("{prefix}.gate"), c, e)?,
            reduce: Fc::build(bd, &format!("{prefix}.reduce"), e, c)?,
        })
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let a = self.dw.forward(cx, self.expand.forward(cx, x)?)?.silu();
        let dirs = [0, 1, 2, 3].map(|i| self.scans[i].vars(cx));
        let a = self.norm.forward(cx, ssm_2d_var(a, &dirs)?)?;
        let b = self.gate.forward(cx, x)?.silu();
        self.reduce.forward(cx, a.mul(b)?)
    }
}

/// Low-frequency branch: `Z = VSSM(LN(x)) + x; out = FFN(Z) + Z`.
#[derive(Clone, Debug)]
pub struct Lfssm {
    pub norm: Norm,
    pub vssm: Vssm,
    pub ffn: GatedFfn,
}

impl Lfssm {
    pub fn build(bd: &mut Builder, prefix: &str, c: usize, e: usize, n: usize) -> Result<Self> {
        Ok(Lfssm {
            norm: Norm::build(bd, &format!("{prefix}.norm"), c)?,
            vssm: Vssm::build(bd, &format!("{prefix}.vssm"), c, e, n)?,
            ffn: GatedFfn::build(bd, &format!("{prefix}.ffn"), c)?,
        })
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let z = self.vssm.forward(cx, self.norm.forward(cx, x)?)?.add(x)?;
        self.ffn.forward(cx, z)?.add(z)
    }
}

/// Depthwise five-branch difference convolution, or its fused kernel.
#[derive(Clone, Debug)]
pub enum PdConv {
    /// Tap weights per branch in [`PdcKind::ALL`] order; the bias rides on
    /// the vanilla branch.
    Branches { taps: Vec<ParamId>, b: ParamId },
    Fused { kernel: ParamId, b: ParamId },
}

impl PdConv {
    pub fn build(bd: &mut Builder, prefix: &str, c: usize, fused: bool) -> Result<Self> {
        if fused {
            return Ok(PdConv::Fused {
                kernel: bd.param(format!("{prefix}.fused"), [c, 1, 3, 3], Init::Kaiming { fan_in: 9 })?,
                b: bd.param(format!("{prefix}.b"), [1, c, 1, 1], Init::Zeros)?,
            });
        }
        let mut taps = Vec::with_capacity(5);
        for kind in PdcKind::ALL {
            let t = PdcSpec::standard(kind).num_taps();
            taps.push(bd.param(format!("{prefix}.{}", kind.label()), [c, 1, 1, t], Init::Kaiming { fan_in: t })?);
        }
        Ok(PdConv::Branches {
            taps,
            b: bd.param(format!("{prefix}.b"), [1, c, 1, 1], Init::Zeros)?,
        })
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            PdConv::Fused { kernel, b } => x.depthwise_conv2d(cx.p(*kernel), Some(cx.p(*b)), 1),
            PdConv::Branches { taps, b } => {
                let mut acc: Option<Var<'t>> = None;
                for (kind, &id) in PdcKind::ALL.iter().zip(taps) {
                    let k = cx.p(id).taps_to_kernel(&PdcSpec::standard(*kind))?;
                    let bias = (*kind == PdcKind::Vanilla).then(|| cx.p(*b));
                    let y = x.depthwise_conv2d(k, bias, 1)?;
                    acc = Some(match acc {
                        None => y,
                        Some(a) => a.add(y)?,
                    });
                }
                Ok(acc.expect("five branches"))
            }
        }
    }
}

/// High-frequency gate: `σ(PDC(FC(f_wh))) ⊙ DW(FC(f_l))`.
#[derive(Clone, Debug)]
pub struct Hfem {
    pub low: Fc,
    pub low_dw: DwConv3,
    pub high: Fc,
    pub pdc: PdConv,
}

impl Hfem {
    pub fn build(bd: &mut Builder, prefix: &str, c: usize, fused: bool) -> Result<Self> {
        Ok(Hfem {
            low: Fc::build(bd, &format!("{prefix}.low"), c, 3 * c)?,
            low_dw: DwConv3::build(bd, &format!("{prefix}.low_dw"), 3 * c)?,
            high: Fc::build(bd, &format!("{prefix}.high"), 3 * c, 3 * c)?,
            pdc: PdConv::build(bd, &format!("{prefix}.pdc"), 3 * c, fused)?,
        })
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, f_l: Var<'t>, f_wh: Var<'t>) -> Result<Var<'t>> {
        if f_wh.shape()[1] != 3 * f_l.shape()[1] {
            return Err(Error::shape(
                "hfem",
                format!("high bands have {} channels, expected 3 x {}", f_wh.shape()[1], f_l.shape()[1]),
            ));
        }
        let gate = self.pdc.forward(cx, self.high.forward(cx, f_wh)?)?.sigmoid();
        let value = self.low_dw.forward(cx, self.low.forward(cx, f_l)?)?;
        gate.mul(value)
    }
}

/// Wavelet block: split into bands, process low and high frequencies, fuse,
/// refine, reconstruct, add the input back.
#[derive(Clone, Debug)]
pub struct Wam {
    pub lfssm: Lfssm,
    pub hfem: Hfem,
    pub refine: Conv3,
}

impl Wam {
    pub fn build(bd: &mut Builder, prefix: &str, c: usize, e: usize, n: usize, fused: bool) -> Result<Self> {
        Ok(Wam {
            lfssm: Lfssm::build(bd, &format!("{prefix}.lfssm"), c, e, n)?,
            hfem: Hfem::build(bd, &format!("{prefix}.hfem"), c, fused)?,
            // Zero so each block starts as the identity: the band product is
            // quadratic in the block input and compounds across blocks.
            refine: Conv3::build_with(bd, &format!("{prefix}.refine"), 4 * c, 4 * c, Init::Zeros)?,
        })
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let c = x.shape()[1];
        let bands = x.haar_dwt()?;
        let low = self.lfssm.forward(cx, bands.narrow_channels(0, c)?)?;
        let high = self.hfem.forward(cx, low, bands.narrow_channels(c, 3 * c)?)?;
        let fused = low.repeat_channels(3).mul(high)?;
        let merged = Var::concat_channels(&[low, fused])?;
        self.refine.forward(cx, merged)?.haar_idwt()?.add(x)
    }
}

/// Residual group: blocks, a 3×3 conv, and a skip over the whole group.
#[derive(Clone, Debug)]
pub struct Group {
    pub blocks: Vec<Wam>,
    pub conv: Conv3,
}

impl Group {
    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let mut y = x;
        for b in &self.blocks {
            y = b.forward(cx, y)?;
        }
        self.conv.forward(cx, y)?.add(x)
    }
}
