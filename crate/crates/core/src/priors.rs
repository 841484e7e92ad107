//! Prior families on the parameter matrix.
//!
//! * The hierarchical low-rank factorization prior `M = L Rᵀ`, with rows of
//!   `L` and `R` drawn from `N(0, diag(γ))` and column variances `γ_k` drawn
//!   from a Gamma or inverse-Gamma hyperprior (both parameterized by shape `a`
//!   and scale `b`).
//! * The spectral scaled Student prior with density proportional to
//!   `det(τ² I + M Mᵀ)^{-(d1+d2+2)/2}`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{contract, Error, Result};
use crate::model::MatrixParam;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Hyperprior family for the column variances `γ_k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GammaFamily {
    /// `Γ(a, b)` with shape `a` and scale `b`.
    Gamma,
    /// `Γ⁻¹(a, b)` with shape `a` and scale `b`.
    InverseGamma,
}

impl GammaFamily {
    pub fn name(self) -> &'static str {
        match self {
            GammaFamily::Gamma => "gamma",
            GammaFamily::InverseGamma => "inverse_gamma",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "gamma" => Ok(GammaFamily::Gamma),
            "inverse_gamma" | "invgamma" | "inv_gamma" => Ok(GammaFamily::InverseGamma),
            other => Err(contract(format!("unknown hyperprior family `{other}`"))),
        }
    }

    /// Full log-density at `gamma > 0`.
    pub fn log_density(self, gamma: f64, a: f64, b: f64) -> f64 {
        match self {
            GammaFamily::Gamma => -ln_gamma(a) - a * b.ln() + (a - 1.0) * gamma.ln() - gamma / b,
            GammaFamily::InverseGamma => {
                a * b.ln() - ln_gamma(a) - (a + 1.0) * gamma.ln() - b / gamma
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorPriorConfig {
    pub k: usize,
    pub a: f64,
    pub b: f64,
    pub family: GammaFamily,
}

impl FactorPriorConfig {
    pub fn new(k: usize, a: f64, b: f64, family: GammaFamily) -> Result<Self> {
        if k == 0 {
            return Err(contract("K must be at least 1"));
        }
        if !(a > 0.0 && a.is_finite()) || !(b > 0.0 && b.is_finite()) {
            return Err(contract(format!("hyperparameters must be positive, got a={a}, b={b}")));
        }
        Ok(Self { k, a, b, family })
    }

    /// `min(d1, d2)` capped at `ceiling`.
    pub fn default_k(d1: usize, d2: usize, ceiling: usize) -> usize {
        d1.min(d2).min(ceiling).max(1)
    }
}

/// State of the factorized parameterization.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorState {
    pub l: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub gamma: DVector<f64>,
}

impl FactorState {
    pub fn new(l: DMatrix<f64>, r: DMatrix<f64>, gamma: DVector<f64>) -> Result<Self> {
        let k = gamma.len();
        if k == 0 || l.ncols() != k || r.ncols() != k {
            return Err(contract(format!(
                "factor widths disagree: L has {}, R has {}, γ has {k}",
                l.ncols(),
                r.ncols()
            )));
        }
        if gamma.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
            return Err(contract("column variances must be positive and finite"));
        }
        Ok(Self { l, r, gamma })
    }

    pub fn k(&self) -> usize {
        self.gamma.len()
    }

    pub fn d1(&self) -> usize {
        self.l.nrows()
    }

    pub fn d2(&self) -> usize {
        self.r.nrows()
    }

    /// The induced matrix `L Rᵀ`.
    pub fn induced(&self) -> DMatrix<f64> {
        &self.l * self.r.transpose()
    }

    /// `‖L_{·k}‖² + ‖R_{·k}‖²` for each column.
    pub fn column_energy(&self) -> DVector<f64> {
        DVector::from_fn(self.k(), |k, _| {
            self.l.column(k).norm_squared() + self.r.column(k).norm_squared()
        })
    }

    /// Applies a column permutation: column `k` of the result is column `perm[k]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.k());
        let l = DMatrix::from_fn(self.d1(), self.k(), |i, k| self.l[(i, perm[k])]);
        let r = DMatrix::from_fn(self.d2(), self.k(), |j, k| self.r[(j, perm[k])]);
        let gamma = DVector::from_fn(self.k(), |k, _| self.gamma[perm[k]]);
        Self { l, r, gamma }
    }

    fn check(&self, cfg: &FactorPriorConfig) -> Result<()> {
        if self.k() != cfg.k {
            return Err(contract(format!(
                "state has {} columns but the prior has K={}",
                self.k(),
                cfg.k
            )));
        }
        if self.gamma.iter().any(|g| !(*g > 0.0)) {
            return Err(contract("column variances must be positive"));
        }
        Ok(())
    }
}

/// Log-density of the factorization prior at `(L, R, γ)`, fully normalized
/// (so differences between states are exact).
pub fn factor_log_prior(state: &FactorState, cfg: &FactorPriorConfig) -> Result<f64> {
    state.check(cfg)?;
    let rows = (state.d1() + state.d2()) as f64;
    let energy = state.column_energy();
    let mut acc = 0.0;
    for k in 0..state.k() {
        let g = state.gamma[k];
        acc += cfg.family.log_density(g, cfg.a, cfg.b);
        acc += -0.5 * rows * (LN_2PI + g.ln()) - 0.5 * energy[k] / g;
    }
    Ok(acc)
}

/// Gradients of [`factor_log_prior`]; the `γ` gradient is taken in `θ = log γ`
/// and includes the Jacobian of that change of variables.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorPriorGrad {
    pub l: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub log_gamma: DVector<f64>,
}

pub fn factor_log_prior_grad(state: &FactorState, cfg: &FactorPriorConfig) -> Result<FactorPriorGrad> {
    state.check(cfg)?;
    let inv = state.gamma.map(|g| 1.0 / g);
    let mut l = state.l.clone();
    let mut r = state.r.clone();
    for k in 0..state.k() {
        l.column_mut(k).scale_mut(-inv[k]);
        r.column_mut(k).scale_mut(-inv[k]);
    }
    let energy = state.column_energy();
    let log_gamma = DVector::from_fn(state.k(), |k, _| {
        log_gamma_prior_grad(state.gamma[k], energy[k], state.d1() + state.d2(), cfg)
    });
    Ok(FactorPriorGrad { l, r, log_gamma })
}

/// `∂/∂θ` of the θ-space log-density of one column variance, given the
/// column energy and the number of Gaussian entries it governs.
pub(crate) fn log_gamma_prior_grad(gamma: f64, energy: f64, rows: usize, cfg: &FactorPriorConfig) -> f64 {
    let half_rows = 0.5 * rows as f64;
    let base = match cfg.family {
        GammaFamily::Gamma => cfg.a - gamma / cfg.b,
        GammaFamily::InverseGamma => -cfg.a + cfg.b / gamma,
    };
    base - half_rows + 0.5 * energy / gamma
}

/// θ-space log-density (up to a constant) of one column variance given its
/// column energy: hyperprior plus Gaussian factor terms plus `θ`.
pub(crate) fn log_gamma_conditional(theta: f64, energy: f64, rows: usize, cfg: &FactorPriorConfig) -> f64 {
    let g = theta.exp();
    cfg.family.log_density(g, cfg.a, cfg.b) - 0.5 * rows as f64 * theta - 0.5 * energy / g + theta
}

/// Shape of the conjugate inverse-Gamma conditional of each `γ_k`.
pub fn gamma_conditional_shape(cfg: &FactorPriorConfig, d1: usize, d2: usize) -> f64 {
    cfg.a + 0.5 * (d1 + d2) as f64
}

/// Scales `b + (‖L_{·k}‖² + ‖R_{·k}‖²)/2` of the conjugate conditionals.
pub fn gamma_conditional_scales(state: &FactorState, cfg: &FactorPriorConfig) -> DVector<f64> {
    state.column_energy().map(|e| cfg.b + 0.5 * e)
}

/// Exact Gibbs draw of `γ | L, R` for the inverse-Gamma family.
pub fn gamma_conditional_draw<R: Rng + ?Sized>(
    state: &FactorState,
    cfg: &FactorPriorConfig,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let shape = gamma_conditional_shape(cfg, state.d1(), state.d2());
    let unit = Gamma::new(shape, 1.0).map_err(|e| contract(e.to_string()))?;
    let variates: Vec<f64> = (0..state.k()).map(|_| unit.sample(rng)).collect();
    gamma_conditional_from_variates(state, cfg, &variates)
}

/// Deterministic core of [`gamma_conditional_draw`]: maps unit-scale
/// `Gamma(shape, 1)` variates to `γ_k = scale_k / G_k`.
pub fn gamma_conditional_from_variates(
    state: &FactorState,
    cfg: &FactorPriorConfig,
    variates: &[f64],
) -> Result<DVector<f64>> {
    state.check(cfg)?;
    if cfg.family != GammaFamily::InverseGamma {
        return Err(Error::Unsupported(
            "conjugate γ draw requires the inverse-Gamma family; the Gamma family uses a Langevin move on log γ"
                .into(),
        ));
    }
    if variates.len() != state.k() {
        return Err(contract("one Gamma variate per column is required"));
    }
    let scales = gamma_conditional_scales(state, cfg);
    Ok(DVector::from_fn(state.k(), |k, _| scales[k] / variates[k]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentPriorConfig {
    pub tau: f64,
}

impl StudentPriorConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau.is_finite() {
            Ok(Self { tau })
        } else {
            Err(contract(format!("tau must be positive, got {tau}")))
        }
    }

    /// The choice `τ = 1/n` under which the rate statements hold.
    pub fn auto(n: usize) -> Self {
        Self {
            tau: 1.0 / n.max(1) as f64,
        }
    }
}

/// Exponent `(d1 + d2 + 2)/2` of the Student prior.
pub fn student_power(d1: usize, d2: usize) -> f64 {
    0.5 * (d1 + d2 + 2) as f64
}

/// `log det(τ² I_{d1} + M Mᵀ)`, factoring the smaller Gram matrix.
pub fn student_log_det(m: &DMatrix<f64>, tau: f64) -> f64 {
    let (d1, d2) = m.shape();
    let t2 = tau * tau;
    let (gram, shift) = if d1 <= d2 {
        (m * m.transpose(), 0.0)
    } else {
        (m.transpose() * m, 2.0 * (d1 - d2) as f64 * tau.ln())
    };
    let mut gram = gram;
    for i in 0..gram.nrows() {
        gram[(i, i)] += t2;
    }
    let chol = gram
        .cholesky()
        .expect("τ² I + Gram is positive definite for τ > 0");
    let ld: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    2.0 * ld + shift
}

/// `-((d1+d2+2)/2) log det(τ² I + M Mᵀ)`.
pub fn student_log_prior(m: &MatrixParam, cfg: &StudentPriorConfig) -> f64 {
    -student_power(m.d1(), m.d2()) * student_log_det(m.as_matrix(), cfg.tau)
}

/// `-(d1+d2+2) (τ² I + M Mᵀ)⁻¹ M`, by a Cholesky solve on the smaller side.
pub fn student_log_prior_grad(m: &MatrixParam, cfg: &StudentPriorConfig) -> DMatrix<f64> {
    student_grad_raw(m.as_matrix(), cfg.tau)
}

pub(crate) fn student_grad_raw(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    student_value_and_grad_raw(m, tau).1
}

/// Log-prior and gradient sharing one Cholesky factorization.
pub(crate) fn student_value_and_grad_raw(m: &DMatrix<f64>, tau: f64) -> (f64, DMatrix<f64>) {
    let (d1, d2) = m.shape();
    let t2 = tau * tau;
    let power = student_power(d1, d2);
    let wide = d1 <= d2;
    let mut gram = if wide { m * m.transpose() } else { m.transpose() * m };
    for i in 0..gram.nrows() {
        gram[(i, i)] += t2;
    }
    let chol = gram.cholesky().expect("τ² I + Gram is positive definite for τ > 0");
    let mut log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let grad = if wide {
        chol.solve(m) * (-2.0 * power)
    } else {
        // (τ²I + MMᵀ)⁻¹ M = M (τ²I + MᵀM)⁻¹
        log_det += 2.0 * (d1 - d2) as f64 * tau.ln();
        chol.solve(&m.transpose()).transpose() * (-2.0 * power)
    };
    (-power * log_det, grad)
}

/// Exact draw from the Student prior through its matrix-variate t
/// representation: `S ~ Wishart_{d1}(d1 + 2, I)` and `M = τ S^{-1/2} Z` with a
/// standard Gaussian `Z`. Integrating `S` out leaves a density proportional
/// to `det(τ² I + M Mᵀ)^{-(d1+d2+2)/2}`.
pub fn sample_student_prior<R: Rng + ?Sized>(
    cfg: &StudentPriorConfig,
    d1: usize,
    d2: usize,
    rng: &mut R,
) -> Result<MatrixParam> {
    if d1 == 0 || d2 == 0 {
        return Err(contract("Student prior draws need d1, d2 ≥ 1"));
    }
    let dof = (d1 + 2) as f64;
    // Bartlett factor: S = A Aᵀ with A lower triangular.
    let mut a = DMatrix::<f64>::zeros(d1, d1);
    for i in 0..d1 {
        let chi = ChiSquared::new(dof - i as f64).map_err(|e| contract(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let z = DMatrix::<f64>::from_fn(d1, d2, |_, _| rng.sample(StandardNormal));
    // Aᵀ X = Z gives Cov(rows of X) = S⁻¹.
    let x = a
        .tr_solve_lower_triangular(&z)
        .ok_or_else(|| contract("singular Bartlett factor"))?;
    MatrixParam::new(x * cfg.tau)
}

/// Ground truth `M* = Ū V̄ᵀ` with its factor certificate.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthSpec {
    pub r: usize,
    pub bound: f64,
    pub ubar: DMatrix<f64>,
    pub vbar: DMatrix<f64>,
}

impl TruthSpec {
    pub fn check(&self) -> Result<()> {
        if self.ubar.ncols() != self.vbar.ncols() {
            return Err(contract("Ū and V̄ must have the same number of columns"));
        }
        if self.r > self.ubar.ncols() {
            return Err(contract(format!(
                "rank {} exceeds the factor width {}",
                self.r,
                self.ubar.ncols()
            )));
        }
        if !(self.bound > 0.0) {
            return Err(contract("B must be positive"));
        }
        for (name, f) in [("Ū", &self.ubar), ("V̄", &self.vbar)] {
            let sup = f.amax();
            if sup > self.bound {
                return Err(contract(format!("‖{name}‖_∞ = {sup} exceeds B = {}", self.bound)));
            }
            for k in self.r..f.ncols() {
                if f.column(k).iter().any(|v| *v != 0.0) {
                    return Err(contract(format!("{name} column {} must be zero (r = {})", k + 1, self.r)));
                }
            }
        }
        Ok(())
    }
}

/// Numerical rank with singular values below `rel_tol · s_max` treated as zero.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = m.clone().singular_values();
    let smax = s.max();
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|v| **v > rel_tol * smax).count()
}

pub fn build_truth(spec: &TruthSpec) -> Result<MatrixParam> {
    spec.check()?;
    let m = &spec.ubar * spec.vbar.transpose();
    let rank = numerical_rank(&m, 1e-10);
    if rank > spec.r {
        return Err(contract(format!("built truth has rank {rank} > r = {}", spec.r)));
    }
    MatrixParam::new(m)
}
