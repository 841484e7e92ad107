//! Closed-form rates, constants and KL bounds, and the bookkeeping that
//! checks high-probability concentration statements against replicated runs.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{contract, Result};
use crate::metrics::c_alpha;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorRateInput {
    pub n: usize,
    pub d1: usize,
    pub d2: usize,
    pub r: usize,
    pub a: f64,
    pub bound: f64,
    /// The unspecified constant `C_{a,B}`; only scaling in `n` and `r` is testable.
    pub constant: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentRateInput {
    pub n: usize,
    pub d1: usize,
    pub d2: usize,
    pub r: usize,
    pub frob_mstar: f64,
}

/// `C r (d1 + d2) log(n d1 d2) / n`.
pub fn rate_factorized(input: &FactorRateInput) -> f64 {
    let n = input.n as f64;
    let dd = (input.d1 * input.d2) as f64;
    input.constant * input.r as f64 * (input.d1 + input.d2) as f64 * (n * dd).ln() / n
}

/// `2 r (d1 + d2 + 2) log(1 + n ‖M*‖_F / √(2r)) / n`, zero when `r = 0`.
pub fn rate_student(input: &StudentRateInput) -> f64 {
    if input.r == 0 {
        return 0.0;
    }
    let n = input.n as f64;
    let r = input.r as f64;
    2.0 * r * (input.d1 + input.d2 + 2) as f64 * (n * input.frob_mstar / (2.0 * r).sqrt()).ln_1p() / n
}

/// The hyperprior scale `B² / [512 (n d1 d2)⁴ K² max(d1, d2)²]`.
pub fn b_default(n: usize, d1: usize, d2: usize, k: usize, bound: f64) -> f64 {
    let ndd = (n * d1 * d2) as f64;
    let k = k as f64;
    let dmax = d1.max(d2) as f64;
    bound * bound / (512.0 * ndd.powi(4) * k * k * dmax * dmax)
}

/// `C_a = log(8 √π Γ(a) 2^{10a+1}) + 3`.
pub fn c_a_constant(a: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(contract(format!("a must be positive, got {a}")));
    }
    let log_8_sqrt_pi = (8.0 * std::f64::consts::PI.sqrt()).ln();
    Ok(log_8_sqrt_pi + ln_gamma(a) + (10.0 * a + 1.0) * std::f64::consts::LN_2 + 3.0)
}

/// `2 (1 + 2a) r (d1 + d2) [log(n d1 d2) + C_a]`.
pub fn kl_rho_pi_bound(n: usize, d1: usize, d2: usize, r: usize, a: f64) -> Result<f64> {
    let ca = c_a_constant(a)?;
    let ndd = (n * d1 * d2) as f64;
    Ok(2.0 * (1.0 + 2.0 * a) * r as f64 * (d1 + d2) as f64 * (ndd.ln() + ca))
}

/// `2 r (d1 + d2 + 2) log(1 + ‖M*‖_F / (τ √(2r)))`, zero when `r = 0`.
pub fn kl_rho0_student_bound(d1: usize, d2: usize, r: usize, tau: f64, frob_mstar: f64) -> f64 {
    if r == 0 {
        return 0.0;
    }
    let r = r as f64;
    2.0 * r * (d1 + d2 + 2) as f64 * (frob_mstar / (tau * (2.0 * r).sqrt())).ln_1p()
}

/// Which concentration statement a threshold belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoundSide {
    /// Posterior-averaged Rényi divergence ≤ `2(α+1)/(1−α) ε_n`.
    RenyiTheorem,
    /// Posterior-averaged squared Hellinger ≤ `c_α ε_n`.
    HellingerCorollary,
    /// Posterior-averaged normalized squared Frobenius ≤ `c_α ε_n / (C1 C_κ)`.
    FrobeniusTheorem,
}

impl BoundSide {
    pub const ALL: [BoundSide; 3] = [
        BoundSide::RenyiTheorem,
        BoundSide::HellingerCorollary,
        BoundSide::FrobeniusTheorem,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundSide::RenyiTheorem => "renyi",
            BoundSide::HellingerCorollary => "hellinger",
            BoundSide::FrobeniusTheorem => "frobenius",
        }
    }
}

pub fn concentration_threshold(
    epsilon_n: f64,
    alpha: f64,
    side: BoundSide,
    c1: Option<f64>,
    c_kappa: Option<f64>,
) -> Result<f64> {
    match side {
        BoundSide::RenyiTheorem => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(contract(format!("alpha must lie in (0, 1), got {alpha}")));
            }
            Ok(2.0 * (alpha + 1.0) / (1.0 - alpha) * epsilon_n)
        }
        BoundSide::HellingerCorollary => Ok(c_alpha(alpha)? * epsilon_n),
        BoundSide::FrobeniusTheorem => {
            let (c1, ck) = match (c1, c_kappa) {
                (Some(c1), Some(ck)) if c1 > 0.0 && ck > 0.0 => (c1, ck),
                _ => {
                    return Err(contract(
                        "the Frobenius threshold needs positive C1 and C_kappa",
                    ))
                }
            };
            Ok(c_alpha(alpha)? / (c1 * ck) * epsilon_n)
        }
    }
}

/// `1 − 2/(n ε_n)`; `-∞` when `ε_n = 0`.
pub fn probability_floor(n: usize, epsilon_n: f64) -> f64 {
    1.0 - 2.0 / (n as f64 * epsilon_n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckResult {
    pub side: BoundSide,
    pub epsilon_n: f64,
    pub threshold: f64,
    /// May be `≤ 0`, in which case the statement is vacuous at this scale.
    pub probability_floor: f64,
    pub empirical_fraction: f64,
    pub trivially_satisfied: bool,
    pub runs: usize,
    pub pass: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConcentrationInput {
    pub n: usize,
    pub epsilon_n: f64,
    pub alpha: f64,
    pub side: BoundSide,
    pub c1: Option<f64>,
    pub c_kappa: Option<f64>,
}

/// Fraction of runs whose integral is at most the threshold, against the floor.
pub fn check_concentration(runs: &[f64], input: &ConcentrationInput) -> Result<BoundCheckResult> {
    let threshold = concentration_threshold(input.epsilon_n, input.alpha, input.side, input.c1, input.c_kappa)?;
    tally_concentration(runs, input.side, input.n, input.epsilon_n, threshold)
}

/// [`check_concentration`] with a precomputed threshold.
pub fn tally_concentration(
    runs: &[f64],
    side: BoundSide,
    n: usize,
    epsilon_n: f64,
    threshold: f64,
) -> Result<BoundCheckResult> {
    if runs.is_empty() {
        return Err(contract("at least one run is needed"));
    }
    let below = runs.iter().filter(|v| **v <= threshold).count();
    let empirical_fraction = below as f64 / runs.len() as f64;
    let floor = probability_floor(n, epsilon_n);
    let trivially_satisfied = !(floor > 0.0);
    Ok(BoundCheckResult {
        side,
        epsilon_n,
        threshold,
        probability_floor: floor,
        empirical_fraction,
        trivially_satisfied,
        runs: runs.len(),
        pass: trivially_satisfied || empirical_fraction >= floor,
    })
}
