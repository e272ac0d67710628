//! Test-support crate: f64 reference math plus a central finite-difference
//! driver. Gradient checks difference the reference forward in f64 and
//! compare against the engine's analytic f32 gradients, so the oracle never
//! touches the backward path it is checking.

pub mod reference;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Central finite-difference gradient of a scalar function, step `h` per
/// component, everything in f64.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Default finite-difference step (matches the gradient-check contract).
pub const FD_STEP: f64 = 1e-5;

/// Maximum relative error between an analytic f32 gradient and a numeric f64
/// one. Component magnitudes below `floor` are compared on an absolute scale
/// (|a - b| / floor) so near-zero components do not blow up the ratio.
pub fn max_rel_err(analytic: &[f32], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut worst = 0.0f64;
    for (&a, &b) in analytic.iter().zip(numeric) {
        let a = a as f64;
        let denom = a.abs().max(b.abs()).max(floor);
        worst = worst.max((a - b).abs() / denom);
    }
    worst
}

/// Magnitude floor used by the gradient suite: components below 0.1 are
/// checked at absolute tolerance 0.1 * rtol.
pub const REL_ERR_FLOOR: f64 = 0.1;

/// Seeded uniform values in [lo, hi).
pub fn seeded_vec(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Seeded values bounded away from zero (|x| >= margin); for primitives with
/// a kink at the origin, where finite differences would straddle it.
pub fn seeded_vec_away_from_zero(seed: u64, n: usize, scale: f64, margin: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            sign * rng.gen_range(margin..scale)
        })
        .collect()
}

/// f64 -> f32 narrowing for feeding the engine.
pub fn to_f32(x: &[f64]) -> Vec<f32> {
    x.iter().map(|&v| v as f32).collect()
}
