//! Exact divergences between the Bernoulli observation laws induced by two
//! parameter matrices, matrix distances, and the distance-transfer constants.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::model::{logistic, MatrixParam, SamplingDistribution};

/// How per-entry divergences are aggregated over the sampling distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// `Σ_ij Π_ij d(f(A_ij), f(B_ij))`: the divergence of the joint law of `(ω, Y)`.
    Joint,
    /// The joint sum divided by `d1 d2`.
    PaperNormalized,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Divergence {
    Kl,
    HellingerSq,
    Renyi(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceKind {
    pub kind: Divergence,
    pub normalization: Normalization,
}

impl DivergenceKind {
    pub fn new(kind: Divergence, normalization: Normalization) -> Result<Self> {
        if let Divergence::Renyi(a) = kind {
            check_alpha(a)?;
        }
        Ok(Self { kind, normalization })
    }

    pub fn paper(kind: Divergence) -> Result<Self> {
        Self::new(kind, Normalization::PaperNormalized)
    }
}

fn check_prob(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(contract(format!("probability {p} is not strictly inside (0, 1)")))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(contract(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// `KL(Ber(p) ‖ Ber(q))`.
pub fn bernoulli_kl(p: f64, q: f64) -> Result<f64> {
    check_prob(p)?;
    check_prob(q)?;
    Ok(kl_unchecked(p, q))
}

fn kl_unchecked(p: f64, q: f64) -> f64 {
    let v = p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
    v.max(0.0)
}

/// `(√p − √q)² + (√(1−p) − √(1−q))²`, in `[0, 2]`.
pub fn bernoulli_hellinger_sq(p: f64, q: f64) -> Result<f64> {
    for v in [p, q] {
        if !(0.0..=1.0).contains(&v) {
            return Err(contract(format!("probability {v} outside [0, 1]")));
        }
    }
    Ok(hellinger_unchecked(p, q))
}

fn hellinger_unchecked(p: f64, q: f64) -> f64 {
    (p.sqrt() - q.sqrt()).powi(2) + ((1.0 - p).sqrt() - (1.0 - q).sqrt()).powi(2)
}

/// Rényi divergence of order `alpha ∈ (0,1)` between `Ber(p)` and `Ber(q)`.
pub fn bernoulli_renyi(p: f64, q: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_prob(p)?;
    check_prob(q)?;
    Ok(renyi_unchecked(p, q, alpha))
}

fn renyi_unchecked(p: f64, q: f64, alpha: f64) -> f64 {
    let affinity = (alpha * p.ln() + (1.0 - alpha) * q.ln()).exp()
        + (alpha * (1.0 - p).ln() + (1.0 - alpha) * (1.0 - q).ln()).exp();
    (affinity.ln() / (alpha - 1.0)).max(0.0)
}

/// Per-entry divergence between the laws at logits `a` (first argument) and `b`.
pub fn entry_divergence(a: f64, b: f64, kind: Divergence) -> f64 {
    if a == b {
        return 0.0;
    }
    let (p, q) = (logistic(a), logistic(b));
    match kind {
        Divergence::HellingerSq => hellinger_unchecked(p, q),
        Divergence::Kl => kl_logits(a, b),
        Divergence::Renyi(alpha) => renyi_logits(a, b, alpha),
    }
}

// Logit-space forms keep precision when f(a) rounds to 0 or 1.
fn kl_logits(a: f64, b: f64) -> f64 {
    use crate::model::log_logistic as ll;
    let p = logistic(a);
    let v = p * (ll(a) - ll(b)) + (1.0 - p) * (ll(-a) - ll(-b));
    v.max(0.0)
}

fn renyi_logits(a: f64, b: f64, alpha: f64) -> f64 {
    use crate::model::log_logistic as ll;
    let t1 = alpha * ll(a) + (1.0 - alpha) * ll(b);
    let t2 = alpha * ll(-a) + (1.0 - alpha) * ll(-b);
    let hi = t1.max(t2);
    let log_aff = hi + ((t1 - hi).exp() + (t2 - hi).exp()).ln();
    (log_aff / (alpha - 1.0)).max(0.0)
}

/// Aggregated divergence `D(P_A, P_B)` under the sampling distribution `pi`.
pub fn joint_divergence(
    a: &MatrixParam,
    b: &MatrixParam,
    pi: &SamplingDistribution,
    kind: DivergenceKind,
) -> Result<f64> {
    if a.shape() != b.shape() || a.shape() != pi.shape() {
        return Err(contract(format!(
            "shape mismatch: {:?}, {:?}, Π {:?}",
            a.shape(),
            b.shape(),
            pi.shape()
        )));
    }
    Ok(joint_divergence_raw(a.as_matrix(), b.as_matrix(), pi.probs(), kind))
}

pub(crate) fn joint_divergence_raw(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    probs: &DMatrix<f64>,
    kind: DivergenceKind,
) -> f64 {
    let total: f64 = a
        .iter()
        .zip(b.iter())
        .zip(probs.iter())
        .map(|((&x, &y), &w)| if w > 0.0 { w * entry_divergence(x, y, kind.kind) } else { 0.0 })
        .sum();
    match kind.normalization {
        Normalization::Joint => total,
        Normalization::PaperNormalized => total / a.len() as f64,
    }
}

/// `c_α`: `2(α+1)/(1−α)` on `[1/2, 1)` and `2(α+1)/α` on `(0, 1/2)`.
pub fn c_alpha(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(if alpha >= 0.5 {
        2.0 * (alpha + 1.0) / (1.0 - alpha)
    } else {
        2.0 * (alpha + 1.0) / alpha
    })
}

/// `C_κ = inf_{|x|≤κ} f'(x)² / (8 f(x)(1 − f(x))) = e^κ / (8 (1 + e^κ)²)`.
pub fn c_kappa(kappa: f64) -> Result<f64> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(contract(format!("kappa must be finite and nonnegative, got {kappa}")));
    }
    // f(κ)(1 − f(κ))/8, written to stay finite for large κ.
    let e = (-kappa).exp();
    Ok(e / (8.0 * (1.0 + e) * (1.0 + e)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub c_alpha: f64,
    pub c_kappa: f64,
    pub kappa: f64,
    pub c1: f64,
}

impl ConstantsReport {
    pub fn compute(alpha: f64, kappa: f64, pi: &SamplingDistribution) -> Result<Self> {
        Ok(Self {
            c_alpha: c_alpha(alpha)?,
            c_kappa: c_kappa(kappa)?,
            kappa,
            c1: pi.c1(),
        })
    }
}

fn check_shapes(a: &MatrixParam, b: &MatrixParam) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(contract(format!("shape mismatch: {:?} vs {:?}", a.shape(), b.shape())))
    }
}

/// `‖A − B‖_F`.
pub fn frobenius_error(a: &MatrixParam, b: &MatrixParam) -> Result<f64> {
    check_shapes(a, b)?;
    Ok((a.as_matrix() - b.as_matrix()).norm())
}

/// `‖A − B‖²_F / (d1 d2)`.
pub fn frobenius_sq_normalized(a: &MatrixParam, b: &MatrixParam) -> Result<f64> {
    check_shapes(a, b)?;
    Ok(frob_sq_normalized_raw(a.as_matrix(), b.as_matrix()))
}

pub(crate) fn frob_sq_normalized_raw(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm_squared() / a.len() as f64
}

/// `max |A_ij − B_ij|`.
pub fn sup_error(a: &MatrixParam, b: &MatrixParam) -> Result<f64> {
    check_shapes(a, b)?;
    Ok((a.as_matrix() - b.as_matrix()).amax())
}
