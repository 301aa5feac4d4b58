//! Branch-free `expm1` that the compiler can vectorize across a slice.
//!
//! Range reduction `z = k·ln2 + r`, `|r| ≤ ln2/2`, a degree-13 Taylor
//! polynomial for `expm1(r)`, then `expm1(z) = 2^k·expm1(r) + (2^k − 1)`.
//! Agrees with `f64::exp_m1` to a few ulp for `z ≤ 709`; larger inputs saturate.

const LOG2_E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
/// Adding and subtracting `1.5·2^52` rounds to the nearest integer.
const ROUND: f64 = 6_755_399_441_055_744.0;
const Z_MIN: f64 = -708.0;
const Z_MAX: f64 = 709.0;

/// `1/k!` for `k = 2..=13`, highest order first.
const INV_FACT: [f64; 12] = [
    1.0 / 6_227_020_800.0,
    1.0 / 479_001_600.0,
    1.0 / 39_916_800.0,
    1.0 / 3_628_800.0,
    1.0 / 362_880.0,
    1.0 / 40_320.0,
    1.0 / 5_040.0,
    1.0 / 720.0,
    1.0 / 120.0,
    1.0 / 24.0,
    1.0 / 6.0,
    1.0 / 2.0,
];

#[inline(always)]
pub fn expm1_fast(z: f64) -> f64 {
    let z = z.clamp(Z_MIN, Z_MAX);
    let k = (z * LOG2_E + ROUND) - ROUND;
    let r = (z - k * LN2_HI) - k * LN2_LO;
    let mut p = INV_FACT[0];
    for &c in &INV_FACT[1..] {
        p = p * r + c;
    }
    let em1_r = r + r * r * p;
    let scale = f64::from_bits(((k as i64 + 1023) as u64) << 52);
    scale * em1_r + (scale - 1.0)
}
