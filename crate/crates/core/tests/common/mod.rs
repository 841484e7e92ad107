//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use onebit::{Observation, ObservationSet};

/// Largest entrywise error between `grad` and a central difference of `f`,
/// relative to `max(1, |analytic|, |numeric|)`.
pub fn fd_relative_error(f: impl Fn(&DMatrix<f64>) -> f64, x: &DMatrix<f64>, grad: &DMatrix<f64>, h: f64) -> f64 {
    let mut worst = 0.0f64;
    let mut xp = x.clone();
    for idx in 0..x.len() {
        let orig = xp[idx];
        xp[idx] = orig + h;
        let up = f(&xp);
        xp[idx] = orig - h;
        let down = f(&xp);
        xp[idx] = orig;
        let numeric = (up - down) / (2.0 * h);
        let scale = 1.0f64.max(grad[idx].abs()).max(numeric.abs());
        worst = worst.max((grad[idx] - numeric).abs() / scale);
    }
    worst
}

pub fn normal_matrix<R: Rng + ?Sized>(d1: usize, d2: usize, sd: f64, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(d1, d2, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

/// `n` labels at uniformly random entries with fair-coin signs.
pub fn random_data<R: Rng + ?Sized>(d1: usize, d2: usize, n: usize, rng: &mut R) -> ObservationSet {
    let obs = (0..n)
        .map(|_| {
            let y = if rng.random::<bool>() { 1 } else { -1 };
            Observation::new(rng.random_range(0..d1), rng.random_range(0..d2), y).unwrap()
        })
        .collect();
    ObservationSet::new(d1, d2, obs).unwrap()
}

/// 1×1 data with the given label counts.
pub fn scalar_data(positive: usize, negative: usize) -> ObservationSet {
    let obs = std::iter::repeat_n(1i8, positive)
        .chain(std::iter::repeat_n(-1i8, negative))
        .map(|y| Observation::new(0, 0, y).unwrap())
        .collect();
    ObservationSet::new(1, 1, obs).unwrap()
}

/// Posterior mean and variance of a scalar log-density by midpoint
/// quadrature with `points` cells on `[lo, hi]`.
pub fn quadrature_moments(log_density: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> (f64, f64) {
    let w = (hi - lo) / points as f64;
    let xs: Vec<f64> = (0..points).map(|k| lo + (k as f64 + 0.5) * w).collect();
    let logs: Vec<f64> = xs.iter().map(|&x| log_density(x)).collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (x, l) in xs.iter().zip(&logs) {
        let p = (l - top).exp();
        z += p;
        s1 += p * x;
        s2 += p * x * x;
    }
    let mean = s1 / z;
    (mean, s2 / z - mean * mean)
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Log marginal density of `m = l·r` at rank one with `l, r ~ N(0, γ)` and
/// `γ ~ InvGamma(a, b)`, up to a constant:
/// `p(m) ∝ ∫₀^∞ (b + |m| cosh t)^{-(a+1)} dt`.
pub fn inverse_gamma_factor_log_marginal(m: f64, a: f64, b: f64) -> f64 {
    let am = m.abs();
    // Flat up to t ≈ ln(2b/|m|), then decays like e^{-(a+1)t}.
    let upper = (1.0 + 2.0 * b / am.max(1e-300)).ln() + 40.0 / (a + 1.0);
    let cells = 800;
    let w = upper / cells as f64;
    let sum: f64 = (0..cells)
        .map(|k| {
            let t = (k as f64 + 0.5) * w;
            (b + am * t.cosh()).powf(-(a + 1.0))
        })
        .sum();
    (sum * w).ln()
}
