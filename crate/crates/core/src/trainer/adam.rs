use crate::error::{Error, Result};
use crate::numerics::{Grid, ParamStore};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Moment estimates for every parameter, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed updates.
    pub step: u64,
    pub m: Vec<Grid>,
    pub v: Vec<Grid>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, _, g)| Grid::zeros(g.shape())).collect();
        AdamState {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    fn matches(&self, params: &ParamStore) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|((_, _, p), (m, v))| m.shape() == p.shape() && v.shape() == p.shape())
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient is
/// non-finite.
pub fn adam_step(params: &mut ParamStore, grads: &[Grid], state: &mut AdamState, lr: f64) -> Result<()> {
    if !state.matches(params) || grads.len() != params.len() {
        return Err(Error::shape("adam_step", "state or gradients do not match the parameters"));
    }
    for ((_, name, p), g) in params.iter().zip(grads) {
        if g.shape() != p.shape() {
            return Err(Error::shape("adam_step", format!("gradient for {name} has shape {:?}", g.shape())));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite {
                op: "adam_step",
                detail: format!("gradient of {name} at step {}", state.step + 1),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let g = grads[k].data();
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        let p = params.get_mut(id).data_mut();
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
