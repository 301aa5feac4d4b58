//! Acceptance criteria 1 to 9. Each test prints one `criterion N: PASS|FAIL`
//! line to stdout (uncaptured) and then asserts. Criteria run one at a time
//! so their wall-clock budgets are measured without contention.

mod common;

use std::fs;
use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use common::{path_str, perturbed_model, stderr, stdout, tiny_config, wmsr};
use wmsr::data::{make_pairs, read_grid, synth_sst, PairConfig, SynthParams};
use wmsr::network::{ModelConfig, PdcMode};
use wmsr::numerics::gradcheck::{gradcheck, GradcheckOptions, Stencil};
use wmsr::numerics::{Grid, ParamStore, Tape};
use wmsr::objective::{dft2, freq_loss, rec_loss, LossWeights, MetricRow};
use wmsr::pdconv::{fuse, pdc_forward, PdcKind, PdcSpec};
use wmsr::sscan::{scan, ssm_2d, SsmParams};
use wmsr::trainer::{evaluate, LrSchedule, TrainConfig, Trainer};
use wmsr::wavelet::{haar_dwt, haar_idwt};

static SERIAL: Mutex<()> = Mutex::new(());

/// Outcome of one check inside a criterion.
struct Checks {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn new() -> Self {
        Checks {
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if ok {
            self.notes.push(what);
        } else {
            self.failures.push(what);
        }
    }

    fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }
}

fn criterion(n: u32, title: &str, budget: Option<Duration>, body: impl FnOnce(&mut Checks)) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut checks = Checks::new();
    body(&mut checks);
    let elapsed = start.elapsed();
    if let Some(b) = budget {
        checks.check(elapsed < b, format!("runtime {:.1}s < {}s", elapsed.as_secs_f64(), b.as_secs()));
    }
    let pass = checks.failures.is_empty();
    let detail = if pass { checks.notes.join("; ") } else { checks.failures.join("; ") };
    let line = format!(
        "criterion {n}: {} {title} [{:.1}s] {detail}\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
    assert!(pass, "criterion {n} failed: {detail}");
}

fn normal(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Grid {
    Grid::from_fn(shape, |_| rng.sample(StandardNormal))
}

fn rel_err(a: &Grid, b: &Grid) -> f64 {
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.sum_squares().sqrt().max(b.sum_squares().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

// ---------------------------------------------------------------------------
// 1. Wavelet

#[test]
fn criterion_1_wavelet() {
    criterion(1, "wavelet round trip, energy and closed form", Some(Duration::from_secs(5)), |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut worst_rt, mut worst_energy, mut worst_direct) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..100 {
            let shape = [
                rng.gen_range(1..=2),
                rng.gen_range(1..=3),
                2 * rng.gen_range(1..=12),
                2 * rng.gen_range(1..=12),
            ];
            let x = normal(shape, &mut rng);
            let bands = haar_dwt(&x).unwrap();
            worst_rt = worst_rt.max(haar_idwt(&bands).unwrap().max_abs_diff(&x));
            worst_energy = worst_energy.max((bands.energy() - x.sum_squares()).abs());
            // Direct 2×2 block formulas.
            let [b, ch, h, w] = shape;
            for bi in 0..b {
                for ci in 0..ch {
                    for i in 0..h / 2 {
                        for j in 0..w / 2 {
                            let p = x.at(bi, ci, 2 * i, 2 * j);
                            let q = x.at(bi, ci, 2 * i, 2 * j + 1);
                            let r = x.at(bi, ci, 2 * i + 1, 2 * j);
                            let s = x.at(bi, ci, 2 * i + 1, 2 * j + 1);
                            let expect = [(p + q + r + s) / 2.0, (p - q + r - s) / 2.0, (p + q - r - s) / 2.0, (p - q - r + s) / 2.0];
                            let got = [&bands.ll, &bands.lh, &bands.hl, &bands.hh].map(|g| g.at(bi, ci, i, j));
                            for k in 0..4 {
                                worst_direct = worst_direct.max((expect[k] - got[k]).abs());
                            }
                        }
                    }
                }
            }
        }
        c.check(worst_rt <= 1e-12, format!("idwt(dwt(x)) max err {worst_rt:.1e} <= 1e-12"));
        c.check(worst_energy <= 1e-9, format!("energy gap {worst_energy:.1e} <= 1e-9"));
        c.check(worst_direct <= 1e-12, format!("block formulas max err {worst_direct:.1e}"));

        let block = Grid::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bands = haar_dwt(&block).unwrap();
        let got = [&bands.ll, &bands.lh, &bands.hl, &bands.hh].map(|g| g.data()[0]);
        let expect = [5.0, -1.0, -2.0, 0.0];
        let ok = got.iter().zip(expect).all(|(g, e)| (g - e).abs() <= 1e-15);
        c.check(ok, format!("[[1,2],[3,4]] -> {got:?}"));
    });
}

// ---------------------------------------------------------------------------
// 2. Selective scan

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Scan positions of the four raster orders over an `h × w` grid.
fn raster_orders(h: usize, w: usize) -> [Vec<(usize, usize)>; 4] {
    let row: Vec<(usize, usize)> = (0..h).flat_map(|i| (0..w).map(move |j| (i, j))).collect();
    let col: Vec<(usize, usize)> = (0..w).flat_map(|j| (0..h).map(move |i| (i, j))).collect();
    let rev = |v: &Vec<(usize, usize)>| v.iter().rev().copied().collect::<Vec<_>>();
    [row.clone(), rev(&row), col.clone(), rev(&col)]
}

/// Step-by-step recurrence over every direction, averaged.
fn naive_ssm_2d(x: &Grid, params: &[SsmParams; 4]) -> Grid {
    let [b, e, h, w] = x.shape();
    let mut out = Grid::zeros(x.shape());
    for (order, p) in raster_orders(h, w).iter().zip(params) {
        let n = p.a_log.shape()[1];
        for bi in 0..b {
            let mut state = vec![vec![0.0; n]; e];
            for &(i, j) in order {
                let xt: Vec<f64> = (0..e).map(|c| x.at(bi, c, i, j)).collect();
                let proj = |wt: &Grid, rows: usize| -> Vec<f64> {
                    (0..rows).map(|r| (0..e).map(|c| wt.at(r, c, 0, 0) * xt[c]).sum()).collect()
                };
                let bt = proj(&p.w_b, n);
                let ct = proj(&p.w_c, n);
                let dpre = proj(&p.w_delta, e);
                for ch in 0..e {
                    let delta = softplus(dpre[ch] + p.b_delta.data()[ch]);
                    let mut y = p.d.data()[ch] * xt[ch];
                    for k in 0..n {
                        let a = -p.a_log.at(ch, k, 0, 0).exp();
                        let abar = (delta * a).exp();
                        let bbar = (delta * a).exp_m1() / a * bt[k];
                        state[ch][k] = abar * state[ch][k] + bbar * xt[ch];
                        y += ct[k] * state[ch][k];
                    }
                    out.set(bi, ch, i, j, out.at(bi, ch, i, j) + 0.25 * y);
                }
            }
        }
    }
    out
}

#[test]
fn criterion_2_selective_scan() {
    criterion(2, "four-direction scan vs naive recurrence", Some(Duration::from_secs(10)), |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let shape = [rng.gen_range(1..=2), rng.gen_range(1..=4), rng.gen_range(1..=7), rng.gen_range(1..=7)];
            let n = rng.gen_range(1..=4);
            let params = [0, 1, 2, 3].map(|_| {
                let mut p = SsmParams::init(shape[1], n, &mut rng);
                p.d = normal(p.d.shape(), &mut rng);
                p.b_delta = normal(p.b_delta.shape(), &mut rng);
                p
            });
            let x = normal(shape, &mut rng);
            let fast = ssm_2d(&x, &params).unwrap();
            worst = worst.max(fast.max_abs_diff(&naive_ssm_2d(&x, &params)));
        }
        c.check(worst <= 1e-12, format!("50 inputs max err {worst:.1e} <= 1e-12"));

        let ln2 = std::f64::consts::LN_2;
        let y = scan(
            &Grid::full([1, 1, 1, 2], 1.0),
            &Grid::full([1, 1, 1, 2], ln2),
            &Grid::full([1, 1, 1, 2], 1.0),
            &Grid::full([1, 1, 1, 2], 1.0),
            &Grid::full([1, 1, 1, 1], -1.0),
            &Grid::zeros([1, 1, 1, 1]),
        )
        .unwrap();
        let ok = (y.data()[0] - 0.5).abs() <= 1e-12 && (y.data()[1] - 0.75).abs() <= 1e-12;
        c.check(ok, format!("frozen scalars y = ({:.15}, {:.15})", y.data()[0], y.data()[1]));
    });
}

// ---------------------------------------------------------------------------
// 3. Difference-convolution fusion

fn random_branches(out_c: usize, in_c: usize, rng: &mut ChaCha8Rng) -> Vec<(PdcSpec, Grid)> {
    PdcKind::ALL
        .iter()
        .map(|&k| {
            let spec = PdcSpec::standard(k);
            let w = normal([out_c, in_c, 1, spec.num_taps()], rng);
            (spec, w)
        })
        .collect()
}

fn branch_sum(x: &Grid, branches: &[(PdcSpec, Grid)]) -> Grid {
    let mut acc: Option<Grid> = None;
    for (spec, w) in branches {
        let y = pdc_forward(x, spec, w).unwrap();
        acc = Some(match acc {
            None => y,
            Some(mut a) => {
                a.add_assign(&y);
                a
            }
        });
    }
    acc.unwrap()
}

#[test]
fn criterion_3_pdc_fusion() {
    criterion(3, "five-branch sum vs fused kernel", Some(Duration::from_secs(10)), |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst_dense = 0.0f64;
        for _ in 0..20 {
            let (o, i) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
            let branches = random_branches(o, i, &mut rng);
            let fused = fuse(&branches).unwrap();
            let x = normal([2, i, rng.gen_range(1..=9), rng.gen_range(1..=9)], &mut rng);
            worst_dense = worst_dense.max(branch_sum(&x, &branches).max_abs_diff(&fused.apply(&x, None).unwrap()));
        }
        c.check(worst_dense <= 1e-10, format!("random multi-channel max err {worst_dense:.1e} <= 1e-10"));

        let mut worst_depthwise = 0.0f64;
        for _ in 0..10 {
            let ch = rng.gen_range(1..=4);
            let branches = random_branches(ch, 1, &mut rng);
            let fused = fuse(&branches).unwrap();
            let x = normal([1, ch, 7, 6], &mut rng);
            worst_depthwise = worst_depthwise.max(branch_sum(&x, &branches).max_abs_diff(&fused.apply(&x, None).unwrap()));
        }
        c.check(worst_depthwise <= 1e-10, format!("depthwise max err {worst_depthwise:.1e}"));

        // Every 5×5 input is a combination of the 25 unit impulses, and both
        // sides are linear, so agreement on the impulses covers them all.
        let branches = random_branches(1, 1, &mut rng);
        let fused = fuse(&branches).unwrap();
        let mut worst_basis = 0.0f64;
        for k in 0..25 {
            let x = Grid::from_fn([1, 1, 5, 5], |[_, _, i, j]| if i * 5 + j == k { 1.0 } else { 0.0 });
            worst_basis = worst_basis.max(branch_sum(&x, &branches).max_abs_diff(&fused.apply(&x, None).unwrap()));
        }
        for _ in 0..20 {
            let x = normal([1, 1, 5, 5], &mut rng);
            worst_basis = worst_basis.max(branch_sum(&x, &branches).max_abs_diff(&fused.apply(&x, None).unwrap()));
        }
        c.check(worst_basis <= 1e-10, format!("5x5 impulse basis and random max err {worst_basis:.1e}"));

        let cdc = PdcSpec::standard(PdcKind::Central);
        let k = fuse(&[(cdc.clone(), Grid::full([1, 1, 1, cdc.num_taps()], 1.0))]).unwrap().kernel;
        let ok = (0..9).all(|q| k.data()[q] == if q == 4 { -8.0 } else { 1.0 });
        c.check(ok, "unit-weight central kernel has center -8");
    });
}

// ---------------------------------------------------------------------------
// 4. Gradients

type LossFn = Box<dyn for<'t> Fn(&'t Tape, &ParamStore) -> wmsr::Result<wmsr::numerics::Var<'t>>>;

struct OpCase {
    name: &'static str,
    store: ParamStore,
    loss: LossFn,
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<OpCase> {
    let mut cases = Vec::new();
    let mut add = |name: &'static str, inputs: Vec<(&str, Grid)>, out_shape: [usize; 4], f: LossFnBody| {
        let mut store = ParamStore::new();
        let ids: Vec<_> = inputs.into_iter().map(|(n, g)| store.add(n, g).unwrap()).collect();
        let proj = Grid::from_fn(out_shape, |[b, c, i, j]| ((b * 7 + c * 5 + i * 3 + j) as f64 * 0.37).sin());
        let f = Arc::new(f);
        let loss: LossFn = Box::new(move |tape, s| {
            let vars: Vec<_> = ids.iter().map(|&id| tape.param(s, id)).collect();
            f(&vars)?.dot_const(&proj)
        });
        cases.push(OpCase { name, store, loss });
    };
    let g = |shape, rng: &mut ChaCha8Rng| normal(shape, rng);

    add("conv2d", vec![("x", g([2, 3, 5, 4], rng)), ("k", g([2, 3, 3, 3], rng)), ("b", g([1, 2, 1, 1], rng))], [2, 2, 5, 4],
        Box::new(|v| v[0].conv2d(v[1], Some(v[2]), 1, 1)));
    add("depthwise_conv2d", vec![("x", g([1, 3, 5, 5], rng)), ("k", g([3, 1, 3, 3], rng)), ("b", g([1, 3, 1, 1], rng))], [1, 3, 5, 5],
        Box::new(|v| v[0].depthwise_conv2d(v[1], Some(v[2]), 1)));
    add("linear", vec![("x", g([2, 3, 2, 3], rng)), ("w", g([4, 3, 1, 1], rng)), ("b", g([1, 4, 1, 1], rng))], [2, 4, 2, 3],
        Box::new(|v| v[0].linear(v[1], Some(v[2]))));
    add("layer_norm", vec![("x", g([2, 4, 3, 2], rng)), ("g", g([1, 4, 1, 1], rng)), ("b", g([1, 4, 1, 1], rng))], [2, 4, 3, 2],
        Box::new(|v| v[0].layer_norm(v[1], v[2], wmsr::numerics::LAYER_NORM_EPS)));
    add("silu", vec![("x", g([1, 2, 3, 3], rng))], [1, 2, 3, 3], Box::new(|v| Ok(v[0].silu())));
    add("sigmoid", vec![("x", g([1, 2, 3, 3], rng))], [1, 2, 3, 3], Box::new(|v| Ok(v[0].sigmoid())));
    add("softplus", vec![("x", g([1, 2, 3, 3], rng))], [1, 2, 3, 3], Box::new(|v| Ok(v[0].softplus())));
    add("exp", vec![("x", g([1, 2, 3, 3], rng))], [1, 2, 3, 3], Box::new(|v| Ok(v[0].exp())));
    add("mul", vec![("x", g([1, 2, 3, 3], rng)), ("y", g([1, 2, 3, 3], rng))], [1, 2, 3, 3], Box::new(|v| v[0].mul(v[1])));
    add("add_sub", vec![("x", g([1, 2, 3, 3], rng)), ("y", g([1, 2, 3, 3], rng))], [1, 2, 3, 3],
        Box::new(|v| v[0].add(v[1])?.sub(v[1].scale(3.0))));
    add("pixel_shuffle", vec![("x", g([1, 8, 2, 3], rng))], [1, 2, 4, 6], Box::new(|v| v[0].pixel_shuffle(2)));
    add("pixel_unshuffle", vec![("x", g([1, 2, 4, 6], rng))], [1, 8, 2, 3], Box::new(|v| v[0].pixel_unshuffle(2)));
    add("narrow_repeat_concat", vec![("x", g([1, 4, 2, 2], rng))], [1, 6, 2, 2], Box::new(|v| {
        let a = v[0].narrow_channels(1, 2)?.repeat_channels(2);
        wmsr::numerics::Var::concat_channels(&[a, v[0].narrow_channels(0, 2)?])
    }));
    add("haar_dwt", vec![("x", g([1, 2, 4, 6], rng))], [1, 8, 2, 3], Box::new(|v| v[0].haar_dwt()));
    add("haar_idwt", vec![("x", g([1, 8, 2, 3], rng))], [1, 2, 4, 6], Box::new(|v| v[0].haar_idwt()));
    let perm: Arc<Vec<usize>> = Arc::new(vec![4, 0, 5, 2, 1, 3]);
    add("gather_positions", vec![("x", g([1, 2, 2, 3], rng))], [1, 2, 1, 6], Box::new(move |v| v[0].gather_positions(perm.clone(), 1, 6)));
    let adc = PdcSpec::standard(PdcKind::Angular);
    add("taps_to_kernel", vec![("w", g([2, 1, 1, 8], rng))], [2, 1, 3, 3], Box::new(move |v| v[0].taps_to_kernel(&adc)));
    add("selective_scan", vec![
            ("u", g([1, 2, 1, 5], rng)),
            ("delta", Grid::from_fn([1, 2, 1, 5], |[_, c, _, t]| 0.2 + 0.1 * (c + t) as f64)),
            ("bm", g([1, 3, 1, 5], rng)),
            ("cm", g([1, 3, 1, 5], rng)),
            ("a", Grid::from_fn([2, 3, 1, 1], |[e, n, _, _]| -0.5 - (e + n) as f64)),
            ("d", g([1, 2, 1, 1], rng)),
        ], [1, 2, 1, 5],
        Box::new(|v| v[0].selective_scan(v[1], v[2], v[3], v[4], v[5])));
    add("rec_loss", vec![("sr", g([1, 1, 4, 4], rng)), ("hr", g([1, 1, 4, 4], rng))], [1, 1, 1, 1], Box::new(|v| v[0].rec_loss(v[1])));
    cases
}

type LossFnBody = Box<dyn for<'t> Fn(&[wmsr::numerics::Var<'t>]) -> wmsr::Result<wmsr::numerics::Var<'t>>>;

/// Naive normalized 2-D DFT of one plane: `(re, im)` per coefficient.
fn naive_dft(x: &[f64], h: usize, w: usize) -> Vec<(f64, f64)> {
    let tau = std::f64::consts::TAU;
    let mut out = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..h {
                for j in 0..w {
                    let ang = -tau * ((u * i) as f64 / h as f64 + (v * j) as f64 / w as f64);
                    re += x[i * w + j] * ang.cos();
                    im += x[i * w + j] * ang.sin();
                }
            }
            let s = (h * w) as f64;
            out.push((re / s, im / s));
        }
    }
    out
}

#[test]
fn criterion_4_gradients() {
    criterion(4, "finite-difference gradient checks", Some(Duration::from_secs(120)), |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let opts = GradcheckOptions {
            step: 1e-6,
            stencil: Stencil::Central,
            ..GradcheckOptions::default()
        };
        let mut worst = (0.0f64, "");
        for case in op_cases(&mut rng) {
            let r = gradcheck(&case.store, &case.loss, &opts).unwrap().max_rel_err();
            c.check(r < 1e-4, format!("{} {r:.1e}", case.name));
            if r > worst.0 {
                worst = (r, case.name);
            }
        }
        c.note(format!("worst op {} {:.1e}", worst.1, worst.0));

        // The frequency loss back-propagates with its per-coefficient weight
        // held fixed; compare against differences of that frozen objective.
        let (h, w) = (4, 6);
        let sr0 = normal([1, 1, h, w], &mut rng);
        let hr = normal([1, 1, h, w], &mut rng);
        let tape = Tape::new();
        let sr_var = tape.leaf(sr0.clone());
        let loss = sr_var.freq_loss(tape.constant(hr.clone())).unwrap();
        let analytic = tape.backward(loss).unwrap().wrt(sr_var).unwrap().clone();
        let err0 = sr0.zip_map(&hr, |a, b| a - b);
        let weights: Vec<f64> = naive_dft(err0.data(), h, w).iter().map(|(re, im)| re.hypot(*im)).collect();
        let frozen = |sr: &Grid| -> f64 {
            let e = sr.zip_map(&hr, |a, b| a - b);
            let spec = naive_dft(e.data(), h, w);
            spec.iter().zip(&weights).map(|((re, im), wt)| wt * (re * re + im * im)).sum::<f64>() / (h * w) as f64
        };
        let step = 1e-6;
        let numeric = Grid::from_fn(sr0.shape(), |[_, _, i, j]| {
            let mut p = sr0.clone();
            let mut m = sr0.clone();
            p.set(0, 0, i, j, sr0.at(0, 0, i, j) + step);
            m.set(0, 0, i, j, sr0.at(0, 0, i, j) - step);
            (frozen(&p) - frozen(&m)) / (2.0 * step)
        });
        let r = rel_err(&analytic, &numeric);
        c.check(r < 1e-4, format!("freq_loss (frozen weight) {r:.1e}"));

        let cfg = ModelConfig {
            channels: 8,
            groups: 2,
            blocks_per_group: 2,
            scale: 2,
            ssm_state: 4,
            vssm_expand: 2,
            seed: 40,
        };
        let model = perturbed_model(cfg, 41, 0.05);
        let mut store = model.params().clone();
        let xid = store.add("input", normal([1, 1, 8, 8], &mut rng)).unwrap();
        let proj = normal([1, 1, 16, 16], &mut rng);
        let report = gradcheck(
            &store,
            |tape, s| model.forward_with(tape, s, tape.param(s, xid))?.dot_const(&proj),
            &GradcheckOptions {
                step: 1e-3,
                stencil: Stencil::Central4,
                max_elements_per_tensor: Some(3),
                seed: 42,
            },
        )
        .unwrap();
        let r = report.max_rel_err();
        let worst = report.worst().map(|t| t.name.clone()).unwrap_or_default();
        c.check(r < 1e-4, format!("C=8 end-to-end over {} tensors {r:.1e} (worst {worst})", report.tensors.len()));
    });
}

// ---------------------------------------------------------------------------
// 5. Losses

#[test]
fn criterion_5_losses() {
    criterion(5, "loss identities and oracles", Some(Duration::from_secs(10)), |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = normal([2, 2, 6, 5], &mut rng);
        let same = freq_loss(&x, &x).unwrap();
        c.check(same == 0.0, format!("freq_loss(x, x) = {same}"));

        let mut worst = 0.0f64;
        for (h, w) in [(1, 1), (3, 5), (8, 8), (7, 4)] {
            let g = normal([1, 2, h, w], &mut rng);
            let spec = dft2(&g);
            for ch in 0..2 {
                let naive = naive_dft(g.plane(0, ch), h, w);
                for u in 0..h {
                    for v in 0..w {
                        let z = spec.at(0, ch, u, v);
                        let (re, im) = naive[u * w + v];
                        worst = worst.max((z.re - re).abs()).max((z.im - im).abs());
                    }
                }
            }
        }
        c.check(worst <= 1e-9, format!("dft2 vs double sum max err {worst:.1e} <= 1e-9"));

        let weights = LossWeights::default();
        c.check(weights.lambda_rec == 0.1, format!("default lambda_rec = {}", weights.lambda_rec));
        let sr = normal([1, 1, 6, 6], &mut rng);
        let hr = normal([1, 1, 6, 6], &mut rng);
        let rec = sr.data().iter().zip(hr.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / 36.0;
        let diff = hr.zip_map(&sr, |a, b| a - b);
        let freq = naive_dft(diff.data(), 6, 6).iter().map(|(re, im)| re.hypot(*im).powi(3)).sum::<f64>() / 36.0;
        let hand = 0.1 * rec + weights.lambda_freq * freq;
        let total = wmsr::objective::total_loss(&sr, &hr, &weights).unwrap();
        let tape = Tape::inference();
        let on_tape = tape.constant(sr.clone()).total_loss(tape.constant(hr.clone()), &weights).unwrap().item();
        c.check((total - hand).abs() <= 1e-12 * hand.abs().max(1.0), format!("total {total:.12} vs hand {hand:.12}"));
        c.check((on_tape - total).abs() <= 1e-12 * hand.abs().max(1.0), "tape total matches");
        c.check((rec_loss(&sr, &hr).unwrap() - rec).abs() <= 1e-12, "rec_loss is the mean absolute error");
    });
}

// ---------------------------------------------------------------------------
// 6. Training smoke

/// Fixed schedule for the overfitting smoke run: ten epochs of 200
/// single-sample steps, the rate halving every four epochs.
fn smoke_config() -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            scale: 2,
            ..ModelConfig::micro()
        },
        epochs: 10,
        steps_per_epoch: Some(200),
        batch_size: 1,
        schedule: LrSchedule {
            initial: 5e-4,
            period: 4.0,
            decay: 0.5,
        },
        eval_train: true,
        ..TrainConfig::default()
    }
}

/// Train for up to `max_epochs`, scoring the training pairs after each.
/// Stops at the first epoch reaching `target` dB when given.
fn smoke_run(train: &[wmsr::data::PatchPair], max_epochs: usize, target: Option<f64>) -> Vec<MetricRow> {
    let mut trainer = Trainer::new(smoke_config()).unwrap();
    let mut log = Vec::new();
    for _ in 0..max_epochs {
        trainer.run_epoch(train).unwrap();
        let (psnr_db, ssim) = evaluate(trainer.model(), train).unwrap();
        log.push(MetricRow {
            epoch: trainer.epoch(),
            split: "train".into(),
            psnr_db,
            ssim,
        });
        if target.is_some_and(|t| psnr_db >= t) {
            break;
        }
    }
    log
}

#[test]
fn criterion_6_training_smoke() {
    criterion(6, "overfit 8 patches at x2 with the micro config", Some(Duration::from_secs(600)), |c| {
        let cfg = smoke_config();
        let fields: Vec<Grid> = (0..8).map(|i| synth_sst(48, 48, 100 + i, &SynthParams::default()).unwrap()).collect();
        let pairs = PairConfig {
            train_parts: 1,
            test_parts: 0,
            ..PairConfig::new(2, 0)
        };
        let (train, _) = make_pairs(&fields, &pairs).unwrap();
        c.check(train.len() == 8, format!("{} patches", train.len()));
        let steps_per_epoch = cfg.steps_per_epoch.unwrap();
        let log = smoke_run(&train, cfg.epochs, Some(40.0));
        let last = log.last().unwrap();
        let steps = last.epoch * steps_per_epoch;
        c.check(
            last.psnr_db >= 40.0 && steps <= 2000,
            format!("train PSNR {:.2} dB >= 40 after {steps} steps (<= 2000)", last.psnr_db),
        );
        let trace: Vec<String> = log.iter().map(|r| format!("{:.2}", r.psnr_db)).collect();
        c.note(format!("per-epoch PSNR [{}]", trace.join(", ")));

        let prefix = log.len().min(2);
        let again = smoke_run(&train, prefix, None);
        c.check(again[..] == log[..prefix], format!("same-seed rerun reproduces the first {prefix} log rows exactly"));
    });
}

// ---------------------------------------------------------------------------
// 7. Re-parameterization

#[test]
fn criterion_7_reparameterization() {
    criterion(7, "fused vs multi-branch checkpoints end to end", None, |c| {
        let dir = tempfile::tempdir().unwrap();
        let model = perturbed_model(ModelConfig::micro(), 7, 0.02);
        let branch_path = dir.path().join("branch.ckpt");
        wmsr::trainer::Checkpoint::from_model(&model).save(&branch_path).unwrap();
        let fused_path = dir.path().join("fused.ckpt");
        let out = wmsr(&["fuse", "--ckpt", path_str(&branch_path), "--out", path_str(&fused_path)]);
        c.check(out.status.success(), format!("fuse exits 0 {}", stderr(&out).trim()));

        let branch = wmsr::trainer::Checkpoint::load(&branch_path).unwrap().to_model().unwrap();
        let fused = wmsr::trainer::Checkpoint::load(&fused_path).unwrap().to_model().unwrap();
        c.check(branch.mode() == PdcMode::Branches && fused.mode() == PdcMode::Fused, "modes recorded in checkpoints");
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let x = Grid::from_fn([2, 1, 16, 12], |_| rng.gen_range(0.0..1.0));
        let a = branch.predict(&x).unwrap();
        let b = fused.predict(&x).unwrap();
        let d = a.max_abs_diff(&b);
        let scale = a.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        c.check(d <= 1e-8, format!("max output diff {d:.1e} <= 1e-8 (output scale {scale:.2})"));
        c.check(fused.parameter_count() < branch.parameter_count(), "fused model is smaller");
    });
}

// ---------------------------------------------------------------------------
// 8. Configuration fidelity

/// Per-layer count of the reference layout, written out layer by layer.
fn layer_oracle(c: usize, groups: usize, blocks: usize, scale: usize, n: usize, expand: usize) -> usize {
    let conv3 = |i: usize, o: usize| 9 * i * o + o;
    let dw3 = |ch: usize| 9 * ch + ch;
    let fc = |i: usize, o: usize| i * o + o;
    let norm = |ch: usize| 2 * ch;
    let e = expand * c;
    // a_log, d, w_b, w_c, w_delta, b_delta
    let scan_dir = e * n + e + n * e + n * e + e * e + e;
    let vssm = [fc(c, e), dw3(e), 4 * scan_dir, norm(e), fc(c, e), fc(e, c)].iter().sum::<usize>();
    let ffn = norm(c) + dw3(c) + fc(c / 2, c);
    let lfssm = norm(c) + vssm + ffn;
    // Vanilla and central use the full window, angular the 8-ring, and the
    // horizontal and vertical branches the 6 taps with an in-window neighbour.
    let taps = 9 + 9 + 8 + 6 + 6;
    let gate = 3 * c * taps + 3 * c;
    let hfem = fc(c, 3 * c) + dw3(3 * c) + fc(3 * c, 3 * c) + gate;
    let block = lfssm + hfem + conv3(4 * c, 4 * c);
    let group = blocks * block + conv3(c, c);
    conv3(1, c) + groups * group + conv3(c, scale * scale * c) + conv3(c, 1)
}

#[test]
fn criterion_8_configuration_fidelity() {
    criterion(8, "inspect parameter counts over the channel sweep", None, |c| {
        let dir = tempfile::tempdir().unwrap();
        let base = ModelConfig::reference_table();
        let mut reported = Vec::new();
        for channels in [32, 48, 64, 96, 128] {
            let cfg = ModelConfig { channels, ..base.clone() };
            let path = dir.path().join(format!("c{channels}.cfg"));
            fs::write(&path, cfg.to_kv()).unwrap();
            let out = wmsr(&["inspect", "--config", path_str(&path)]);
            let text = stdout(&out);
            let count: Option<usize> = text
                .lines()
                .find_map(|l| l.strip_prefix("parameters="))
                .and_then(|v| v.trim().parse().ok());
            let oracle = layer_oracle(channels, cfg.groups, cfg.blocks_per_group, cfg.scale, cfg.ssm_state, cfg.vssm_expand);
            c.check(out.status.success() && count == Some(oracle), format!("C={channels}: runtime {count:?} vs oracle {oracle}"));
            let reference = wmsr::network::CHANNEL_SWEEP_REFERENCE.iter().find(|r| r.0 == channels).unwrap().4;
            c.check(text.contains(reference), format!("C={channels} prints reference {reference}"));
            reported.push(format!("C={channels} {} (ref {reference})", count.unwrap_or(0)));
            if channels == 64 {
                c.check(text.contains("657.302K"), "C=64 prints 657.302K");
            }
        }
        c.note(format!("diagnostic only: {}", reported.join(", ")));
    });
}

// ---------------------------------------------------------------------------
// 9. Scale contract

#[test]
fn criterion_9_scale_contract() {
    criterion(9, "x2/x3/x4 pipeline on the synthetic split", None, |c| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let out = wmsr(&["gen-data", "--out", path_str(&data), "--fields", "5", "--size", "48x48", "--seed", "9"]);
        c.check(out.status.success(), "gen-data");
        let lr_field = data.join("lr.sstg");
        wmsr::data::write_grid(&lr_field, &Grid::from_fn([1, 1, 12, 16], |[_, _, i, j]| ((i + j) % 5) as f64 / 4.0), 280.0, 300.0)
            .unwrap();
        for r in [2, 3, 4] {
            let cfg = TrainConfig {
                model: tiny_config(r),
                epochs: 1,
                steps_per_epoch: Some(2),
                batch_size: 2,
                ..TrainConfig::default()
            };
            let cfg_path = dir.path().join(format!("x{r}.cfg"));
            fs::write(&cfg_path, cfg.to_kv()).unwrap();
            let run = dir.path().join(format!("run{r}"));
            let out = wmsr(&["train", "--config", path_str(&cfg_path), "--data", path_str(&data), "--out", path_str(&run)]);
            c.check(out.status.success(), format!("x{r} train {}", stderr(&out).trim()));
            let ckpt = run.join("last.ckpt");

            let sr_path = dir.path().join(format!("sr{r}.sstg"));
            let out = wmsr(&["sr", "--ckpt", path_str(&ckpt), "--in", path_str(&lr_field), "--scale", &r.to_string(), "--out", path_str(&sr_path)]);
            let shape = read_grid(&sr_path).map(|g| g.grid().shape()).ok();
            c.check(out.status.success() && shape == Some([1, 1, 12 * r, 16 * r]), format!("x{r} sr 12x16 -> {shape:?}"));

            let out = wmsr(&["eval", "--ckpt", path_str(&ckpt), "--data", path_str(&data)]);
            let text = stdout(&out);
            let row = text.lines().find(|l| l.starts_with(&format!("{r},test,model,")));
            c.check(out.status.success() && row.is_some(), format!("x{r} eval row {row:?}"));
        }
    });
}
