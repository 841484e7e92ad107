//! Log-targets of the fractional posterior for both priors.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::Result;
use crate::model::EntryCounts;
use crate::priors::{
    factor_log_prior, factor_log_prior_grad, log_gamma_conditional, log_gamma_prior_grad,
    student_power, student_value_and_grad_raw, FactorPriorConfig, FactorState, GammaFamily,
};

use super::mala::{LocalMetric, LogTarget};

/// Largest curvature of `log f(x)` in `x` (attained at 0).
const LOGISTIC_CURVATURE: f64 = 0.25;

/// `α log L_n(M) + log π_st(M)` on the full matrix.
#[derive(Clone, Debug)]
pub struct StudentTarget {
    counts: EntryCounts,
    alpha: f64,
    tau: f64,
    spectral: bool,
    lik_curvature: f64,
}

impl StudentTarget {
    /// With `spectral = true` the proposal uses the position-dependent
    /// preconditioner built from the prior's local curvature in the singular
    /// bases of the current state.
    pub fn new(counts: EntryCounts, alpha: f64, tau: f64, spectral: bool) -> Self {
        let (d1, d2) = counts.shape();
        let mean_count = counts.total.sum() / (d1 * d2) as f64;
        Self {
            counts,
            alpha,
            tau,
            spectral,
            lik_curvature: LOGISTIC_CURVATURE * alpha * mean_count,
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Same data and exponent, different scale.
    pub fn with_tau(&self, tau: f64) -> Self {
        Self { tau, ..self.clone() }
    }
}

fn sorted_eigen(gram: DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let eig = SymmetricEigen::new(gram);
    (eig.eigenvectors, eig.eigenvalues.map(|e| e.max(0.0)))
}

impl LogTarget for StudentTarget {
    fn shape(&self) -> (usize, usize) {
        self.counts.shape()
    }

    fn log_density_and_grad(&self, x: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let (lp, gp) = student_value_and_grad_raw(x, self.tau);
        let ll = self.alpha * self.counts.log_likelihood(x);
        let gl = self.counts.log_likelihood_grad(x) * self.alpha;
        (ll + lp, gl + gp)
    }

    fn metric(&self, x: &DMatrix<f64>) -> LocalMetric {
        if !self.spectral {
            return LocalMetric::Identity;
        }
        let (d1, d2) = x.shape();
        let (u, e_left) = sorted_eigen(x * x.transpose());
        let (v, e_right) = sorted_eigen(x.transpose() * x);
        let t2 = self.tau * self.tau;
        let p = 2.0 * student_power(d1, d2);
        let precision = DMatrix::from_fn(d1, d2, |i, j| {
            p / (t2 + e_left[i] + e_right[j]) + self.lik_curvature
        });
        LocalMetric::Spectral { u, v, precision }
    }
}

/// Which factor block a [`FactorBlock`] updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorBlockKind {
    Left,
    Right,
}

/// Conditional log-target of `L` given `(R, γ)` or of `R` given `(L, γ)`,
/// with a diagonal Gauss–Newton metric.
pub struct FactorBlock<'a> {
    pub counts: &'a EntryCounts,
    pub alpha: f64,
    pub kind: FactorBlockKind,
    /// The other factor, held fixed.
    pub other: &'a DMatrix<f64>,
    pub gamma: &'a DVector<f64>,
}

impl FactorBlock<'_> {
    fn induced(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self.kind {
            FactorBlockKind::Left => x * self.other.transpose(),
            FactorBlockKind::Right => self.other * x.transpose(),
        }
    }
}

impl LogTarget for FactorBlock<'_> {
    fn shape(&self) -> (usize, usize) {
        let (d1, d2) = self.counts.shape();
        match self.kind {
            FactorBlockKind::Left => (d1, self.gamma.len()),
            FactorBlockKind::Right => (d2, self.gamma.len()),
        }
    }

    fn log_density_and_grad(&self, x: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let m = self.induced(x);
        let ll = self.alpha * self.counts.log_likelihood(&m);
        let gm = self.counts.log_likelihood_grad(&m) * self.alpha;
        let mut grad = match self.kind {
            FactorBlockKind::Left => &gm * self.other,
            FactorBlockKind::Right => gm.transpose() * self.other,
        };
        let mut lp = 0.0;
        for k in 0..x.ncols() {
            let inv = 1.0 / self.gamma[k];
            lp -= 0.5 * x.column(k).norm_squared() * inv;
            grad.column_mut(k).axpy(-inv, &x.column(k), 1.0);
        }
        (ll + lp, grad)
    }

    fn metric(&self, _x: &DMatrix<f64>) -> LocalMetric {
        // λ_ik = 1/γ_k + c α Σ_j n_ij other_jk²
        let weighted = match self.kind {
            FactorBlockKind::Left => &self.counts.total * self.other.map(|v| v * v),
            FactorBlockKind::Right => self.counts.total.transpose() * self.other.map(|v| v * v),
        };
        let (rows, k) = self.shape();
        LocalMetric::Diagonal(DMatrix::from_fn(rows, k, |i, c| {
            1.0 / self.gamma[c] + LOGISTIC_CURVATURE * self.alpha * weighted[(i, c)]
        }))
    }
}

/// Conditional of `θ = log γ` given the column energies (Gamma family),
/// stored as a `K×1` matrix.
pub struct LogGammaBlock<'a> {
    pub cfg: &'a FactorPriorConfig,
    pub energy: &'a DVector<f64>,
    pub rows: usize,
}

impl LogTarget for LogGammaBlock<'_> {
    fn shape(&self) -> (usize, usize) {
        (self.energy.len(), 1)
    }

    fn log_density_and_grad(&self, x: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let mut lp = 0.0;
        let mut grad = DMatrix::zeros(x.nrows(), 1);
        for k in 0..x.nrows() {
            let theta = x[(k, 0)];
            lp += log_gamma_conditional(theta, self.energy[k], self.rows, self.cfg);
            grad[(k, 0)] = log_gamma_prior_grad(theta.exp(), self.energy[k], self.rows, self.cfg);
        }
        (lp, grad)
    }

    fn metric(&self, x: &DMatrix<f64>) -> LocalMetric {
        // Curvature of −log density in θ: E/(2γ) + γ/b for the Gamma family.
        LocalMetric::Diagonal(DMatrix::from_fn(x.nrows(), 1, |k, _| {
            let g = x[(k, 0)].exp();
            let curv = match self.cfg.family {
                GammaFamily::Gamma => 0.5 * self.energy[k] / g + g / self.cfg.b,
                GammaFamily::InverseGamma => 0.5 * self.energy[k] / g + self.cfg.b / g,
            };
            curv.clamp(0.5, 1e12)
        }))
    }
}

/// Joint fractional log-posterior of a factor state, with the `γ` block in
/// `θ = log γ` (Jacobian included). Gradient blocks are `(L, R, θ)`.
pub fn factor_joint_log_target(
    state: &FactorState,
    counts: &EntryCounts,
    alpha: f64,
    cfg: &FactorPriorConfig,
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    let m = state.induced();
    let lp = factor_log_prior(state, cfg)? + state.gamma.iter().map(|g| g.ln()).sum::<f64>();
    let pg = factor_log_prior_grad(state, cfg)?;
    let gm = counts.log_likelihood_grad(&m) * alpha;
    let gl = &gm * &state.r + pg.l;
    let gr = gm.transpose() * &state.l + pg.r;
    let gt = pg.log_gamma;
    Ok((alpha * counts.log_likelihood(&m) + lp, gl, gr, gt))
}

/// Fractional log-posterior of the Student model and its gradient.
pub fn student_joint_log_target(m: &DMatrix<f64>, counts: &EntryCounts, alpha: f64, tau: f64) -> (f64, DMatrix<f64>) {
    StudentTarget::new(counts.clone(), alpha, tau, false).log_density_and_grad(m)
}
