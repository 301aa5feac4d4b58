//! Central finite-difference oracle for tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;

/// Finite-difference stencil.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`, error `O(h²)`.
    Central,
    /// `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`, error `O(h⁴)`.
    ///
    /// Allows a larger step, which keeps rounding noise in a large loss from
    /// swamping small gradient entries.
    Central4,
}

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub step: f64,
    pub stencil: Stencil,
    /// Check at most this many elements per tensor (chosen at random); `None` checks all.
    pub max_elements_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: 1e-6,
            stencil: Stencil::Central,
            max_elements_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over the checked elements.
    pub rel_err: f64,
    pub max_abs_err: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// Compare the tape gradient of the scalar returned by `loss` with central
/// finite differences for every tensor in `store`.
///
/// `loss` must register tensors through [`Tape::param`] and be deterministic.
pub fn gradcheck<F>(store: &ParamStore, loss: F, opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let l = loss(&tape, store)?;
    let analytic = tape.backward(l)?.for_store(store);
    drop(tape);

    let eval = |s: &ParamStore| -> Result<f64> {
        let tape = Tape::inference();
        Ok(loss(&tape, s)?.item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = store.clone();
    let mut tensors = Vec::new();
    for id in store.ids() {
        let n = store.get(id).len();
        let indices: Vec<usize> = match opts.max_elements_per_tensor {
            Some(k) if k < n => {
                let mut v = sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let (mut diff2, mut a2, mut n2, mut max_abs) = (0.0, 0.0, 0.0, 0.0f64);
        for &i in &indices {
            let orig = store.get(id).data()[i];
            let h = opts.step;
            let mut at = |delta: f64| -> Result<f64> {
                work.get_mut(id).data_mut()[i] = orig + delta;
                eval(&work)
            };
            let numeric = match opts.stencil {
                Stencil::Central => (at(h)? - at(-h)?) / (2.0 * h),
                Stencil::Central4 => {
                    (-at(2.0 * h)? + 8.0 * at(h)? - 8.0 * at(-h)? + at(-2.0 * h)?) / (12.0 * h)
                }
            };
            work.get_mut(id).data_mut()[i] = orig;
            let a = analytic[id.index()].data()[i];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            max_abs = max_abs.max((a - numeric).abs());
        }
        let denom = a2.sqrt().max(n2.sqrt());
        let rel_err = if denom == 0.0 { 0.0 } else { diff2.sqrt() / denom };
        tensors.push(TensorCheck {
            name: store.name(id).to_string(),
            checked: indices.len(),
            rel_err,
            max_abs_err: max_abs,
            grad_norm: a2.sqrt(),
        });
    }
    Ok(GradcheckReport { tensors })
}
