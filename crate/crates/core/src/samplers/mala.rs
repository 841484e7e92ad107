//! Metropolis-adjusted Langevin kernel with an optional position-dependent
//! preconditioner, and dual-averaging step-size adaptation.
//!
//! The proposal from `x` is
//!
//! ```text
//! x' = x + h P(x) ∇log π(x) + √(2h) P(x)^{1/2} ξ,    ξ ~ N(0, I)
//! ```
//!
//! and is accepted with the Metropolis–Hastings ratio that includes both the
//! forward and the reverse Gaussian proposal densities, so `π` is left exactly
//! invariant whatever the preconditioner `P`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Precision (inverse preconditioner) of the proposal at one point.
#[derive(Clone, Debug, PartialEq)]
pub enum LocalMetric {
    /// `P = I`: plain MALA.
    Identity,
    /// Entrywise precisions `λ_ij`; `P` scales entry `(i, j)` by `1/λ_ij`.
    Diagonal(DMatrix<f64>),
    /// Precisions `λ_ij` in the rotated basis `u_i v_jᵀ` of matrix space, where
    /// `u` and `v` are orthogonal.
    Spectral {
        u: DMatrix<f64>,
        v: DMatrix<f64>,
        precision: DMatrix<f64>,
    },
}

impl LocalMetric {
    /// `P g`.
    pub fn precondition(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            LocalMetric::Identity => g.clone(),
            LocalMetric::Diagonal(lam) => g.component_div(lam),
            LocalMetric::Spectral { u, v, precision } => {
                let rotated = u.transpose() * g * v;
                u * rotated.component_div(precision) * v.transpose()
            }
        }
    }

    /// `P^{1/2} ξ`, with `ξ` read in the metric's own basis.
    pub fn scale_noise(&self, xi: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            LocalMetric::Identity => xi.clone(),
            LocalMetric::Diagonal(lam) => xi.zip_map(lam, |x, l| x / l.sqrt()),
            LocalMetric::Spectral { u, v, precision } => {
                u * xi.zip_map(precision, |x, l| x / l.sqrt()) * v.transpose()
            }
        }
    }

    /// `dᵀ P⁻¹ d`.
    pub fn quad_form(&self, d: &DMatrix<f64>) -> f64 {
        match self {
            LocalMetric::Identity => d.norm_squared(),
            LocalMetric::Diagonal(lam) => d.iter().zip(lam.iter()).map(|(x, l)| l * x * x).sum(),
            LocalMetric::Spectral { u, v, precision } => {
                let rotated = u.transpose() * d * v;
                rotated
                    .iter()
                    .zip(precision.iter())
                    .map(|(x, l)| l * x * x)
                    .sum()
            }
        }
    }

    /// `log det P⁻¹`.
    pub fn log_det_precision(&self) -> f64 {
        match self {
            LocalMetric::Identity => 0.0,
            LocalMetric::Diagonal(lam) | LocalMetric::Spectral { precision: lam, .. } => {
                lam.iter().map(|l| l.ln()).sum()
            }
        }
    }
}

/// A differentiable log-density on a matrix space.
pub trait LogTarget {
    fn shape(&self) -> (usize, usize);

    /// Log-density (up to a constant) and its gradient.
    fn log_density_and_grad(&self, x: &DMatrix<f64>) -> (f64, DMatrix<f64>);

    fn log_density(&self, x: &DMatrix<f64>) -> f64 {
        self.log_density_and_grad(x).0
    }

    /// Proposal precision at `x`.
    fn metric(&self, _x: &DMatrix<f64>) -> LocalMetric {
        LocalMetric::Identity
    }
}

/// A point with its cached log-density, gradient and metric.
#[derive(Clone, Debug)]
pub struct MalaPoint {
    pub x: DMatrix<f64>,
    pub log_p: f64,
    pub grad: DMatrix<f64>,
    pub metric: LocalMetric,
}

impl MalaPoint {
    pub fn at<T: LogTarget + ?Sized>(target: &T, x: DMatrix<f64>) -> Self {
        let (log_p, grad) = target.log_density_and_grad(&x);
        let metric = target.metric(&x);
        Self { x, log_p, grad, metric }
    }

    pub fn is_finite(&self) -> bool {
        self.log_p.is_finite() && self.grad.iter().all(|g| g.is_finite())
    }

    fn drift_mean(&self, step: f64) -> DMatrix<f64> {
        &self.x + self.metric.precondition(&self.grad) * step
    }

    /// `log q(to | self)` up to terms that cancel in the acceptance ratio.
    fn log_proposal_to(&self, to: &DMatrix<f64>, step: f64) -> f64 {
        let d = to - self.drift_mean(step);
        0.5 * self.metric.log_det_precision() - self.metric.quad_form(&d) / (4.0 * step)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub accepted: bool,
    /// `min(1, MH ratio)`; 0 for non-finite proposals.
    pub accept_prob: f64,
    /// The proposal had a non-finite log-density or gradient and was rejected.
    pub nonfinite: bool,
}

/// One MALA transition, drawing `ξ` and the uniform from `rng`.
pub fn mala_step<T: LogTarget + ?Sized, R: Rng + ?Sized>(
    current: &mut MalaPoint,
    target: &T,
    step: f64,
    rng: &mut R,
) -> StepOutcome {
    let (d1, d2) = current.x.shape();
    let xi = DMatrix::from_fn(d1, d2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u: f64 = rng.random();
    mala_step_with_noise(current, target, step, &xi, u.ln())
}

/// Proposal point for given noise, without the accept/reject decision.
pub fn mala_proposal(current: &MalaPoint, step: f64, xi: &DMatrix<f64>) -> DMatrix<f64> {
    current.drift_mean(step) + current.metric.scale_noise(xi) * (2.0 * step).sqrt()
}

/// Deterministic core of [`mala_step`]; `log_u` is the log of a uniform draw.
pub fn mala_step_with_noise<T: LogTarget + ?Sized>(
    current: &mut MalaPoint,
    target: &T,
    step: f64,
    xi: &DMatrix<f64>,
    log_u: f64,
) -> StepOutcome {
    let x_new = mala_proposal(current, step, xi);
    if x_new.iter().any(|v| !v.is_finite()) {
        return StepOutcome {
            accepted: false,
            accept_prob: 0.0,
            nonfinite: true,
        };
    }
    let proposed = MalaPoint::at(target, x_new);
    if !proposed.is_finite() {
        return StepOutcome {
            accepted: false,
            accept_prob: 0.0,
            nonfinite: true,
        };
    }
    let log_ratio = proposed.log_p - current.log_p + proposed.log_proposal_to(&current.x, step)
        - current.log_proposal_to(&proposed.x, step);
    let accept_prob = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
    let accepted = log_u < log_ratio;
    if accepted {
        *current = proposed;
    }
    StepOutcome {
        accepted,
        accept_prob,
        nonfinite: false,
    }
}

/// Unadjusted Langevin move (no accept/reject). Biased; not used for verification.
pub fn ula_step<T: LogTarget + ?Sized, R: Rng + ?Sized>(
    current: &mut MalaPoint,
    target: &T,
    step: f64,
    rng: &mut R,
) -> StepOutcome {
    let (d1, d2) = current.x.shape();
    let xi = DMatrix::from_fn(d1, d2, |_, _| rng.sample::<f64, _>(StandardNormal));
    ula_step_with_noise(current, target, step, &xi)
}

/// Deterministic core of [`ula_step`].
pub fn ula_step_with_noise<T: LogTarget + ?Sized>(
    current: &mut MalaPoint,
    target: &T,
    step: f64,
    xi: &DMatrix<f64>,
) -> StepOutcome {
    let proposed = MalaPoint::at(target, mala_proposal(current, step, xi));
    if !proposed.is_finite() {
        return StepOutcome {
            accepted: false,
            accept_prob: 0.0,
            nonfinite: true,
        };
    }
    *current = proposed;
    StepOutcome {
        accepted: true,
        accept_prob: 1.0,
        nonfinite: false,
    }
}

/// Target acceptance rate for MALA step-size adaptation.
pub const MALA_TARGET_ACCEPT: f64 = 0.574;

/// Nesterov dual averaging on `log h`, as used for NUTS step sizes.
#[derive(Clone, Debug)]
pub struct DualAveraging {
    mu: f64,
    target: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    t: f64,
    h_bar: f64,
    log_step: f64,
    log_step_avg: f64,
}

impl DualAveraging {
    pub fn new(initial_step: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * initial_step).ln(),
            target,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            t: 0.0,
            h_bar: 0.0,
            log_step: initial_step.ln(),
            log_step_avg: initial_step.ln(),
        }
    }

    /// Feeds one acceptance probability; returns the step to use next.
    pub fn update(&mut self, accept_prob: f64) -> f64 {
        self.t += 1.0;
        let w = 1.0 / (self.t + self.t0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        self.log_step = self.mu - self.t.sqrt() / self.gamma * self.h_bar;
        let eta = self.t.powf(-self.kappa);
        self.log_step_avg = eta * self.log_step + (1.0 - eta) * self.log_step_avg;
        self.log_step.exp()
    }

    /// The averaged step, used once adaptation ends.
    pub fn final_step(&self) -> f64 {
        self.log_step_avg.exp()
    }
}
