use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Step decay with a cosine inside each segment: the rate starts every
/// segment at `initial·decay^k` and eases down to half of that by the
/// segment's end.
///
/// `lr(e) = initial · decay^k · (0.75 + 0.25·cos(π·t))`, `k = ⌊e/period⌋`,
/// `t = e/period − k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    /// Segment length in epochs.
    pub period: f64,
    pub decay: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: 1e-3,
            period: 20.0,
            decay: 0.5,
        }
    }
}

impl LrSchedule {
    /// Rate at a (possibly fractional) epoch.
    pub fn at(&self, epoch: f64) -> Result<f64> {
        if !(epoch >= 0.0) || !epoch.is_finite() {
            return Err(Error::invalid("lr_schedule", format!("epoch must be non-negative, got {epoch}")));
        }
        if !(self.period > 0.0) {
            return Err(Error::invalid("lr_schedule", "period must be positive"));
        }
        let k = (epoch / self.period).floor();
        let t = epoch / self.period - k;
        Ok(self.initial * self.decay.powi(k as i32) * (0.75 + 0.25 * (PI * t).cos()))
    }
}

/// Default schedule evaluated at `epoch`.
pub fn lr_schedule(epoch: f64) -> Result<f64> {
    LrSchedule::default().at(epoch)
}
