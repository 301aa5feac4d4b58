//! Discretized selective state-space recurrence and its four-direction 2D
//! unfolding.
//!
//! Per channel `e` and state `n` with diagonal `A`:
//!
//! ```text
//! Ā_t = exp(Δ_t A)            B̄_t = (exp(Δ_t A) − 1) / (Δ_t A) · Δ_t B_t
//! h_t = Ā_t h_{t−1} + B̄_t x_t  y_t = C_t · h_t + D x_t,   h_0 = 0
//! ```
//!
//! `B_t`, `C_t` and `Δ_t = softplus(W_Δ x_t + b_Δ)` are projections of the
//! current input, which makes the scan selective.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{expm1_fast, softplus_scalar, Grid, Tape, Var};

/// Below this `|ΔA|` the ZOH factor uses its Taylor series.
pub const SERIES_THRESHOLD: f64 = 1e-4;

/// `(e^z − 1) / z` and its derivative, given `em1 = e^z − 1`.
#[inline]
fn zoh_factor(z: f64, em1: f64) -> (f64, f64) {
    // Both branches are evaluated and selected so the loops calling this
    // stay branch-free; the discarded quotient may be NaN at z = 0.
    let series = (1.0 + z * (0.5 + z / 6.0), 0.5 + z * (1.0 / 3.0 + z / 8.0));
    let exact = (em1 / z, (z * (1.0 + em1) - em1) / (z * z));
    if z.abs() < SERIES_THRESHOLD {
        series
    } else {
        exact
    }
}

/// Zero-order-hold discretization of a scalar mode: returns `(Ā, B̄)`.
pub fn discretize(a: f64, b: f64, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0) {
        return Err(Error::invalid("discretize", format!("Δ must be positive, got {delta}")));
    }
    if !(a < 0.0) {
        return Err(Error::invalid("discretize", format!("A must be negative, got {a}")));
    }
    let z = delta * a;
    let em1 = z.exp_m1();
    let (phi, _) = zoh_factor(z, em1);
    Ok((1.0 + em1, phi * delta * b))
}

/// Scan direction over an `H × W` grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    RowForward,
    RowReverse,
    ColForward,
    ColReverse,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::RowForward,
        Direction::RowReverse,
        Direction::ColForward,
        Direction::ColReverse,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Direction::RowForward => "row_fwd",
            Direction::RowReverse => "row_rev",
            Direction::ColForward => "col_fwd",
            Direction::ColReverse => "col_rev",
        }
    }
}

/// Flattening of an `H × W` grid into a 1D sequence.
#[derive(Clone, Debug)]
pub struct ScanOrder {
    pub direction: Direction,
    pub height: usize,
    pub width: usize,
    /// `forward[k]` is the flat (row-major) index visited at step `k`.
    pub forward: Arc<Vec<usize>>,
    /// `inverse[forward[k]] == k`.
    pub inverse: Arc<Vec<usize>>,
}

impl ScanOrder {
    pub fn new(direction: Direction, height: usize, width: usize) -> Self {
        let n = height * width;
        let col_major = |k: usize| (k % height) * width + k / height;
        let forward: Vec<usize> = match direction {
            Direction::RowForward => (0..n).collect(),
            Direction::RowReverse => (0..n).rev().collect(),
            Direction::ColForward => (0..n).map(col_major).collect(),
            Direction::ColReverse => (0..n).rev().map(col_major).collect(),
        };
        let mut inverse = vec![0; n];
        for (k, &p) in forward.iter().enumerate() {
            inverse[p] = k;
        }
        ScanOrder {
            direction,
            height,
            width,
            forward: Arc::new(forward),
            inverse: Arc::new(inverse),
        }
    }

    /// `(B, C, H, W) -> (B, C, 1, H·W)` in scan order.
    pub fn unfold(&self, x: &Grid) -> Grid {
        gather(x, &self.forward, 1, self.height * self.width)
    }

    /// Inverse of [`ScanOrder::unfold`].
    pub fn fold(&self, seq: &Grid) -> Grid {
        gather(seq, &self.inverse, self.height, self.width)
    }
}

fn gather(x: &Grid, index: &[usize], out_h: usize, out_w: usize) -> Grid {
    let [b, c, _, _] = x.shape();
    let mut out = Grid::zeros([b, c, out_h, out_w]);
    for bi in 0..b {
        for ci in 0..c {
            let src = x.plane(bi, ci);
            for (d, &i) in out.plane_mut(bi, ci).iter_mut().zip(index) {
                *d = src[i];
            }
        }
    }
    out
}

fn scatter(g: &Grid, index: &[usize], in_shape: [usize; 4]) -> Grid {
    let [b, c, _, _] = in_shape;
    let mut out = Grid::zeros(in_shape);
    for bi in 0..b {
        for ci in 0..c {
            let dst = out.plane_mut(bi, ci);
            for (&gv, &i) in g.plane(bi, ci).iter().zip(index) {
                dst[i] += gv;
            }
        }
    }
    out
}

impl<'t> Var<'t> {
    /// Reorder spatial positions: `out[k] = in[index[k]]` per plane.
    pub fn gather_positions(self, index: Arc<Vec<usize>>, out_h: usize, out_w: usize) -> Result<Var<'t>> {
        let x = self.value();
        let in_shape = x.shape();
        let hw = in_shape[2] * in_shape[3];
        if index.len() != out_h * out_w || index.iter().any(|&i| i >= hw) {
            return Err(Error::shape(
                "gather_positions",
                format!("index of length {} does not map {hw} positions to {out_h}x{out_w}", index.len()),
            ));
        }
        let out = gather(&x, &index, out_h, out_w);
        Ok(self
            .tape()
            .op(out, &[self], move |g| vec![Some(scatter(g, &index, in_shape))]))
    }
}

/// Frozen-shape inputs of one selective scan.
struct ScanShapes {
    batch: usize,
    channels: usize,
    state: usize,
    len: usize,
}

fn scan_shapes(u: &Grid, delta: &Grid, bm: &Grid, cm: &Grid, a: &Grid, d: &Grid) -> Result<ScanShapes> {
    let [batch, channels, one, len] = u.shape();
    let state = a.shape()[1];
    let bad = |detail: String| Err(Error::shape("selective_scan", detail));
    if one != 1 {
        return bad(format!("sequence must be (B, E, 1, L), got {:?}", u.shape()));
    }
    if delta.shape() != u.shape() {
        return bad(format!("Δ {:?} vs x {:?}", delta.shape(), u.shape()));
    }
    for (name, m) in [("B", bm), ("C", cm)] {
        if m.shape() != [batch, state, 1, len] {
            return bad(format!("{name} is {:?}, expected {:?}", m.shape(), [batch, state, 1, len]));
        }
    }
    if a.shape() != [channels, state, 1, 1] {
        return bad(format!("A is {:?}, expected {:?}", a.shape(), [channels, state, 1, 1]));
    }
    if d.len() != channels {
        return bad(format!("D has {} entries, expected {channels}", d.len()));
    }
    Ok(ScanShapes {
        batch,
        channels,
        state,
        len,
    })
}

/// `(B, N, 1, L) -> per batch (L, N)` row-major.
fn to_time_major(m: &Grid, s: &ScanShapes) -> Vec<f64> {
    let mut out = vec![0.0; s.batch * s.len * s.state];
    for b in 0..s.batch {
        for n in 0..s.state {
            for (t, &v) in m.plane(b, n).iter().enumerate() {
                out[(b * s.len + t) * s.state + n] = v;
            }
        }
    }
    out
}

fn from_time_major(v: &[f64], s: &ScanShapes) -> Grid {
    let mut out = Grid::zeros([s.batch, s.state, 1, s.len]);
    for b in 0..s.batch {
        for n in 0..s.state {
            for (t, d) in out.plane_mut(b, n).iter_mut().enumerate() {
                *d = v[(b * s.len + t) * s.state + n];
            }
        }
    }
    out
}

struct ScanSaved {
    /// Hidden states `h_t`, layout `[b][e][t][n]`.
    h: Vec<f64>,
    /// `exp(Δ_t A) − 1`, same layout.
    em1: Vec<f64>,
    bt: Vec<f64>,
    ct: Vec<f64>,
}

fn scan_forward(u: &Grid, delta: &Grid, bm: &Grid, cm: &Grid, a: &Grid, d: &Grid, s: &ScanShapes, save: bool) -> (Grid, Option<ScanSaved>) {
    let (nst, len) = (s.state, s.len);
    let bt = to_time_major(bm, s);
    let ct = to_time_major(cm, s);
    let mut y = Grid::zeros(u.shape());
    let total = s.batch * s.channels * len * nst;
    let (mut hs, mut em1s) = if save {
        (vec![0.0; total], vec![0.0; total])
    } else {
        (Vec::new(), Vec::new())
    };
    let mut h = vec![0.0; nst];
    let mut em1 = vec![0.0; nst];
    for b in 0..s.batch {
        let bb = &bt[b * len * nst..(b + 1) * len * nst];
        let cc = &ct[b * len * nst..(b + 1) * len * nst];
        for e in 0..s.channels {
            let x = u.plane(b, e);
            let dl = delta.plane(b, e);
            let ae = &a.data()[e * nst..(e + 1) * nst];
            let de = d.data()[e];
            let out = y.plane_mut(b, e);
            h.fill(0.0);
            let base = (b * s.channels + e) * len * nst;
            for t in 0..len {
                let (xt, dt) = (x[t], dl[t]);
                let brow = &bb[t * nst..(t + 1) * nst];
                let crow = &cc[t * nst..(t + 1) * nst];
                for n in 0..nst {
                    em1[n] = expm1_fast(dt * ae[n]);
                }
                let mut acc = 0.0;
                for n in 0..nst {
                    let (phi, _) = zoh_factor(dt * ae[n], em1[n]);
                    h[n] = (1.0 + em1[n]) * h[n] + phi * dt * brow[n] * xt;
                    acc += crow[n] * h[n];
                }
                if save {
                    let row = base + t * nst..base + (t + 1) * nst;
                    hs[row.clone()].copy_from_slice(&h);
                    em1s[row].copy_from_slice(&em1);
                }
                out[t] = acc + de * xt;
            }
        }
    }
    let saved = save.then_some(ScanSaved {
        h: hs,
        em1: em1s,
        bt,
        ct,
    });
    (y, saved)
}

/// Gradients in parent order `(u, delta, B, C, A, D)`.
#[allow(clippy::too_many_arguments)]
fn scan_backward(gy: &Grid, u: &Grid, delta: &Grid, a: &Grid, d: &Grid, s: &ScanShapes, sv: &ScanSaved) -> [Grid; 6] {
    let (nst, len) = (s.state, s.len);
    let mut gu = Grid::zeros(u.shape());
    let mut gdelta = Grid::zeros(u.shape());
    let mut gbt = vec![0.0; s.batch * len * nst];
    let mut gct = vec![0.0; s.batch * len * nst];
    let mut ga = Grid::zeros(a.shape());
    let mut gd = Grid::zeros(d.shape());
    let mut gh = vec![0.0; nst];
    let zeros = vec![0.0; nst];
    for b in 0..s.batch {
        let bb = &sv.bt[b * len * nst..(b + 1) * len * nst];
        let cc = &sv.ct[b * len * nst..(b + 1) * len * nst];
        for e in 0..s.channels {
            let x = u.plane(b, e);
            let dl = delta.plane(b, e);
            let g = gy.plane(b, e);
            let ae = &a.data()[e * nst..(e + 1) * nst];
            let de = d.data()[e];
            let base = (b * s.channels + e) * len * nst;
            gh.fill(0.0);
            let mut gd_acc = 0.0;
            for t in (0..len).rev() {
                let (xt, dt, gyt) = (x[t], dl[t], g[t]);
                gd_acc += gyt * xt;
                let mut gx = de * gyt;
                let mut gdt = 0.0;
                let ht = &sv.h[base + t * nst..base + (t + 1) * nst];
                let hprev = if t > 0 { &sv.h[base + (t - 1) * nst..base + t * nst] } else { &zeros[..] };
                let em1t = &sv.em1[base + t * nst..base + (t + 1) * nst];
                let gbrow = &mut gbt[(b * len + t) * nst..(b * len + t + 1) * nst];
                let brow = &bb[t * nst..(t + 1) * nst];
                let crow = &cc[t * nst..(t + 1) * nst];
                let gcrow = &mut gct[(b * len + t) * nst..(b * len + t + 1) * nst];
                let gae = &mut ga.data_mut()[e * nst..(e + 1) * nst];
                for n in 0..nst {
                    let ghn = gh[n] + crow[n] * gyt;
                    gcrow[n] += gyt * ht[n];
                    let z = dt * ae[n];
                    let em1 = em1t[n];
                    let abar = 1.0 + em1;
                    let (phi, dphi) = zoh_factor(z, em1);
                    let h_prev = hprev[n];
                    let g_abar = ghn * h_prev;
                    let g_bbar = ghn * xt;
                    gx += ghn * phi * dt * brow[n];
                    let gz = g_abar * abar + g_bbar * dphi * dt * brow[n];
                    gdt += gz * ae[n] + g_bbar * phi * brow[n];
                    gae[n] += gz * dt;
                    gbrow[n] += g_bbar * phi * dt;
                    gh[n] = ghn * abar;
                }
                gu.plane_mut(b, e)[t] = gx;
                gdelta.plane_mut(b, e)[t] = gdt;
            }
            gd.data_mut()[e] += gd_acc;
        }
    }
    [
        gu,
        gdelta,
        from_time_major(&gbt, s),
        from_time_major(&gct, s),
        ga,
        gd,
    ]
}

/// Low-level selective scan over explicit per-step inputs.
///
/// Shapes: `u`, `delta`: `(B, E, 1, L)`; `bm`, `cm`: `(B, N, 1, L)`;
/// `a`: `(E, N, 1, 1)` (negative); `d`: `E` entries. `delta` must be positive.
pub fn scan(u: &Grid, delta: &Grid, bm: &Grid, cm: &Grid, a: &Grid, d: &Grid) -> Result<Grid> {
    let s = scan_shapes(u, delta, bm, cm, a, d)?;
    Ok(scan_forward(u, delta, bm, cm, a, d, &s, false).0)
}

impl<'t> Var<'t> {
    /// Differentiable [`scan`]; `self` is the input sequence `u`.
    pub fn selective_scan(self, delta: Var<'t>, bm: Var<'t>, cm: Var<'t>, a: Var<'t>, d: Var<'t>) -> Result<Var<'t>> {
        let (u_v, dl_v, b_v, c_v, a_v, d_v) = (self.value(), delta.value(), bm.value(), cm.value(), a.value(), d.value());
        let s = scan_shapes(&u_v, &dl_v, &b_v, &c_v, &a_v, &d_v)?;
        let record = self.tape().is_recording();
        let (y, saved) = scan_forward(&u_v, &dl_v, &b_v, &c_v, &a_v, &d_v, &s, record);
        let parents = [self, delta, bm, cm, a, d];
        if !record {
            return Ok(self.tape().op(y, &parents, |_| unreachable!()));
        }
        let saved = saved.expect("saved when recording");
        Ok(self.tape().op(y, &parents, move |g| {
            scan_backward(g, &u_v, &dl_v, &a_v, &d_v, &s, &saved)
                .into_iter()
                .map(Some)
                .collect()
        }))
    }
}

/// Parameters of one scan direction.
#[derive(Clone, Debug)]
pub struct SsmParams {
    /// `(E, N, 1, 1)`; `A = −exp(A_log)`.
    pub a_log: Grid,
    /// `(1, E, 1, 1)`.
    pub d: Grid,
    /// `(N, E, 1, 1)`.
    pub w_b: Grid,
    /// `(N, E, 1, 1)`.
    pub w_c: Grid,
    /// `(E, E, 1, 1)`.
    pub w_delta: Grid,
    /// `(1, E, 1, 1)`.
    pub b_delta: Grid,
}

/// Inverse of softplus.
pub fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Xavier-uniform draw with fans taken from a `(out, in, kh, kw)` shape.
pub fn xavier_uniform(shape: [usize; 4], rng: &mut impl Rng) -> Grid {
    let [out, inp, kh, kw] = shape;
    let limit = (6.0 / ((inp + out) * kh * kw) as f64).sqrt();
    Grid::from_fn(shape, |_| rng.gen_range(-limit..limit))
}

/// `A_log = log(1..=N)` for every channel, so `A = −(1..=N)`.
pub fn a_log_init(channels: usize, state: usize) -> Grid {
    Grid::from_fn([channels, state, 1, 1], |[_, n, _, _]| ((n + 1) as f64).ln())
}

/// Step-size bias with `softplus(b_Δ)` log-uniform in `[STEP_MIN, STEP_MAX]`.
pub fn step_bias_init(channels: usize, rng: &mut impl Rng) -> Grid {
    let (lo, hi) = (STEP_MIN.ln(), STEP_MAX.ln());
    Grid::from_fn([1, channels, 1, 1], |_| inverse_softplus(rng.gen_range(lo..hi).exp()))
}

pub const STEP_MIN: f64 = 1e-3;
pub const STEP_MAX: f64 = 1e-1;

impl SsmParams {
    /// `A_log = log(1..=N)` for every channel, `D = 1`, Xavier-uniform
    /// projections and `b_Δ` such that `softplus(b_Δ)` is log-uniform in
    /// `[1e-3, 1e-1]`.
    pub fn init(channels: usize, state: usize, rng: &mut impl Rng) -> Self {
        let w_b = xavier_uniform([state, channels, 1, 1], rng);
        let w_c = xavier_uniform([state, channels, 1, 1], rng);
        let w_delta = xavier_uniform([channels, channels, 1, 1], rng);
        SsmParams {
            a_log: a_log_init(channels, state),
            d: Grid::full([1, channels, 1, 1], 1.0),
            w_b,
            w_c,
            w_delta,
            b_delta: step_bias_init(channels, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.a_log.shape()[0]
    }

    pub fn state(&self) -> usize {
        self.a_log.shape()[1]
    }

    pub fn on_tape<'t>(&self, tape: &'t Tape) -> SsmVars<'t> {
        SsmVars {
            a_log: tape.constant(self.a_log.clone()),
            d: tape.constant(self.d.clone()),
            w_b: tape.constant(self.w_b.clone()),
            w_c: tape.constant(self.w_c.clone()),
            w_delta: tape.constant(self.w_delta.clone()),
            b_delta: tape.constant(self.b_delta.clone()),
        }
    }
}

/// Tape handles of one direction's parameters.
#[derive(Clone, Copy, Debug)]
pub struct SsmVars<'t> {
    pub a_log: Var<'t>,
    pub d: Var<'t>,
    pub w_b: Var<'t>,
    pub w_c: Var<'t>,
    pub w_delta: Var<'t>,
    pub b_delta: Var<'t>,
}

/// Selective scan of a `(B, E, 1, L)` sequence with input-dependent `B`, `C`, `Δ`.
pub fn selective_scan_seq<'t>(seq: Var<'t>, p: &SsmVars<'t>) -> Result<Var<'t>> {
    if seq.shape()[3] == 0 {
        return Ok(seq.tape().constant(Grid::zeros(seq.shape())));
    }
    let bm = seq.linear(p.w_b, None)?;
    let cm = seq.linear(p.w_c, None)?;
    let delta = seq.linear(p.w_delta, Some(p.b_delta))?.softplus();
    let a = p.a_log.exp().scale(-1.0);
    seq.selective_scan(delta, bm, cm, a, p.d)
}

/// Plain-value selective scan of a `(B, E, 1, L)` sequence.
pub fn selective_scan_1d(seq: &Grid, params: &SsmParams) -> Result<Grid> {
    let tape = Tape::inference();
    let p = params.on_tape(&tape);
    Ok(selective_scan_seq(tape.constant(seq.clone()), &p)?.to_grid())
}

/// Four-direction scan, merged by the mean of the folded outputs.
///
/// `params` are ordered as [`Direction::ALL`].
pub fn ssm_2d_var<'t>(x: Var<'t>, params: &[SsmVars<'t>; 4]) -> Result<Var<'t>> {
    let [_, _, h, w] = x.shape();
    let mut sum: Option<Var<'t>> = None;
    for (dir, p) in Direction::ALL.iter().zip(params) {
        let order = ScanOrder::new(*dir, h, w);
        let seq = x.gather_positions(order.forward.clone(), 1, h * w)?;
        let y = selective_scan_seq(seq, p)?;
        let folded = y.gather_positions(order.inverse.clone(), h, w)?;
        sum = Some(match sum {
            None => folded,
            Some(acc) => acc.add(folded)?,
        });
    }
    Ok(sum.expect("four directions").scale(0.25))
}

pub fn ssm_2d(x: &Grid, params: &[SsmParams; 4]) -> Result<Grid> {
    let tape = Tape::inference();
    let vars = [0, 1, 2, 3].map(|i| params[i].on_tape(&tape));
    Ok(ssm_2d_var(tape.constant(x.clone()), &vars)?.to_grid())
}

/// Softplus of every `b_Δ` entry; the bias-only step sizes.
pub fn bias_step_sizes(params: &SsmParams) -> Vec<f64> {
    params.b_delta.data().iter().map(|&b| softplus_scalar(b)).collect()
}
