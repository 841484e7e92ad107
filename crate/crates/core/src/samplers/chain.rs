//! Chain orchestration for both priors.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{contract, Error, Result};
use crate::model::{EntryCounts, FractionalExponent, MatrixParam, ObservationSet};
use crate::priors::{
    gamma_conditional_from_variates, gamma_conditional_shape, FactorPriorConfig, FactorState,
    GammaFamily, StudentPriorConfig,
};

use super::mala::{
    mala_step_with_noise, ula_step_with_noise, DualAveraging, LogTarget, MalaPoint, StepOutcome,
    MALA_TARGET_ACCEPT,
};
use super::targets::{FactorBlock, FactorBlockKind, LogGammaBlock, StudentTarget};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MalaConfig {
    /// Initial step size (the only one when `adapt` is off).
    pub step_size: f64,
    pub n_steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Dual averaging toward acceptance 0.574 during burn-in.
    pub adapt: bool,
    /// Skip the accept/reject step (biased, faster).
    pub unadjusted: bool,
    /// Position-dependent preconditioning of the Student chain.
    pub precondition: bool,
    /// Variance of the i.i.d. Gaussian start of factor chains (`γ` starts here too).
    pub factor_init_scale: f64,
    /// Student chains: during the first half of burn-in the scale decays
    /// geometrically from `max(τ, 1)` to `τ`, so the chain leaves the spike at 0.
    pub anneal: bool,
}

impl Default for MalaConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            n_steps: 10_000,
            burn_in: 2_000,
            thin: 5,
            adapt: true,
            unadjusted: false,
            precondition: false,
            factor_init_scale: 1.0,
            anneal: true,
        }
    }
}

impl MalaConfig {
    /// Burn-in set to 20% of `n_steps`.
    pub fn with_steps(n_steps: usize) -> Self {
        Self {
            n_steps,
            burn_in: n_steps / 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(contract(format!("step_size must be positive, got {}", self.step_size)));
        }
        if self.burn_in >= self.n_steps {
            return Err(contract(format!(
                "burn_in ({}) must be below n_steps ({})",
                self.burn_in, self.n_steps
            )));
        }
        if self.thin == 0 {
            return Err(contract("thin must be at least 1"));
        }
        if !(self.factor_init_scale > 0.0 && self.factor_init_scale.is_finite()) {
            return Err(contract("factor_init_scale must be positive"));
        }
        Ok(())
    }
}

/// Stored states, every `thin` steps over the whole run.
#[derive(Clone, Debug, PartialEq)]
pub enum ChainStates {
    Matrix(Vec<MatrixParam>),
    Factor(Vec<FactorState>),
}

impl ChainStates {
    pub fn len(&self) -> usize {
        match self {
            ChainStates::Matrix(v) => v.len(),
            ChainStates::Factor(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Matrix (or induced matrix) of stored state `idx`.
    pub fn matrix(&self, idx: usize) -> DMatrix<f64> {
        match self {
            ChainStates::Matrix(v) => v[idx].as_matrix().clone(),
            ChainStates::Factor(v) => v[idx].induced(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetDescriptor {
    pub prior: String,
    pub alpha: f64,
    pub data_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockDiagnostics {
    pub name: String,
    /// Post-burn-in acceptance rate.
    pub accept_rate: f64,
    pub final_step: f64,
    /// Step size every `thin` steps.
    pub step_trajectory: Vec<f64>,
    pub nonfinite_proposals: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub seed: u64,
    pub n_steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub accept_rate: f64,
    pub blocks: Vec<BlockDiagnostics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub states: ChainStates,
    /// Index of the first stored post-burn-in state.
    pub first_kept: usize,
    /// Mean post-burn-in acceptance across the Langevin blocks.
    pub accept_rate: f64,
    pub seed: u64,
    pub target: TargetDescriptor,
    pub diagnostics: ChainDiagnostics,
}

impl Chain {
    pub fn n_kept(&self) -> usize {
        self.states.len() - self.first_kept
    }

    /// Post-burn-in matrices (induced ones for factor chains).
    pub fn kept_matrices(&self) -> Vec<DMatrix<f64>> {
        (self.first_kept..self.states.len())
            .map(|i| self.states.matrix(i))
            .collect()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.states.matrix(0).shape()
    }
}

/// SHA-256 of the observation stream (shape and ordered triples).
pub fn data_digest(data: &ObservationSet) -> String {
    let mut h = Sha256::new();
    let (d1, d2) = data.shape();
    h.update((d1 as u64).to_le_bytes());
    h.update((d2 as u64).to_le_bytes());
    for o in data.observations() {
        h.update((o.i as u64).to_le_bytes());
        h.update((o.j as u64).to_le_bytes());
        h.update([o.y as u8]);
    }
    hex::encode(h.finalize())
}

/// Seed of chain `index` under master seed `master`.
pub fn split_seed(master: u64, index: u64) -> u64 {
    master.wrapping_mul(10007).wrapping_add(index)
}

fn std_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Per-block step-size control and bookkeeping.
struct BlockTracker {
    name: String,
    step: f64,
    adapt: Option<DualAveraging>,
    accepted: usize,
    attempts: usize,
    nonfinite: usize,
    trajectory: Vec<f64>,
}

impl BlockTracker {
    fn new(name: &str, cfg: &MalaConfig) -> Self {
        Self {
            name: name.to_string(),
            step: cfg.step_size,
            adapt: (cfg.adapt && !cfg.unadjusted).then(|| DualAveraging::new(cfg.step_size, MALA_TARGET_ACCEPT)),
            accepted: 0,
            attempts: 0,
            nonfinite: 0,
            trajectory: Vec::new(),
        }
    }

    fn record(&mut self, t: usize, cfg: &MalaConfig, out: &StepOutcome) {
        if out.nonfinite {
            self.nonfinite += 1;
        }
        if t < cfg.burn_in {
            if let Some(da) = self.adapt.as_mut() {
                self.step = da.update(out.accept_prob);
                if t + 1 == cfg.burn_in {
                    self.step = da.final_step();
                }
            }
        } else {
            self.attempts += 1;
            self.accepted += out.accepted as usize;
        }
        if (t + 1) % cfg.thin == 0 {
            self.trajectory.push(self.step);
        }
    }

    fn finish(self) -> BlockDiagnostics {
        BlockDiagnostics {
            name: self.name,
            accept_rate: if self.attempts == 0 { 0.0 } else { self.accepted as f64 / self.attempts as f64 },
            final_step: self.step,
            step_trajectory: self.trajectory,
            nonfinite_proposals: self.nonfinite,
        }
    }
}

fn assemble(
    states: ChainStates,
    cfg: &MalaConfig,
    seed: u64,
    target: TargetDescriptor,
    blocks: Vec<BlockTracker>,
) -> Chain {
    let blocks: Vec<BlockDiagnostics> = blocks.into_iter().map(BlockTracker::finish).collect();
    let accept_rate = blocks.iter().map(|b| b.accept_rate).sum::<f64>() / blocks.len() as f64;
    Chain {
        states,
        first_kept: cfg.burn_in / cfg.thin,
        accept_rate,
        seed,
        target,
        diagnostics: ChainDiagnostics {
            seed,
            n_steps: cfg.n_steps,
            burn_in: cfg.burn_in,
            thin: cfg.thin,
            accept_rate,
            blocks,
        },
    }
}

fn langevin_move<T: LogTarget + ?Sized>(
    point: &mut MalaPoint,
    target: &T,
    step: f64,
    xi: &DMatrix<f64>,
    log_u: f64,
    unadjusted: bool,
) -> StepOutcome {
    if unadjusted {
        ula_step_with_noise(point, target, step, xi)
    } else {
        mala_step_with_noise(point, target, step, xi, log_u)
    }
}

fn divergent(step: usize, what: &str) -> Error {
    Error::Divergent {
        step,
        reason: format!("non-finite {what}"),
    }
}

/// Langevin chain on the full matrix under the Student prior, started at 0.
pub fn run_student_chain(
    data: &ObservationSet,
    alpha: FractionalExponent,
    cfg: &StudentPriorConfig,
    mala: &MalaConfig,
    seed: u64,
) -> Result<Chain> {
    mala.validate()?;
    let (d1, d2) = data.shape();
    let target = StudentTarget::new(data.counts(), alpha.value(), cfg.tau, mala.precondition);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut point = MalaPoint::at(&target, DMatrix::zeros(d1, d2));
    if !point.is_finite() {
        return Err(divergent(0, "log-target at the initial state"));
    }
    let mut tracker = BlockTracker::new("matrix", mala);
    let anneal_len = if mala.anneal && cfg.tau < 1.0 { mala.burn_in / 2 } else { 0 };
    let mut annealed = (anneal_len > 0).then(|| target.with_tau(1.0));
    if let Some(t) = &annealed {
        point = MalaPoint::at(t, point.x);
    }
    let mut states = Vec::with_capacity(mala.n_steps / mala.thin);
    for t in 0..mala.n_steps {
        if t < anneal_len {
            let frac = t as f64 / anneal_len as f64;
            let tau_t = cfg.tau.powf(frac);
            let a = target.with_tau(tau_t);
            point = MalaPoint::at(&a, point.x);
            annealed = Some(a);
        } else if t == anneal_len && annealed.take().is_some() {
            point = MalaPoint::at(&target, point.x);
            if let Some(da) = tracker.adapt.as_mut() {
                *da = DualAveraging::new(tracker.step, MALA_TARGET_ACCEPT);
            }
        }
        let current: &StudentTarget = annealed.as_ref().unwrap_or(&target);
        let xi = std_normal_matrix(d1, d2, &mut rng);
        let log_u = rng.random::<f64>().ln();
        let out = langevin_move(&mut point, current, tracker.step, &xi, log_u, mala.unadjusted);
        if !point.is_finite() {
            return Err(divergent(t, "state"));
        }
        tracker.record(t, mala, &out);
        if (t + 1) % mala.thin == 0 {
            states.push(MatrixParam::from_matrix_unchecked(point.x.clone()));
        }
    }
    let descriptor = TargetDescriptor {
        prior: format!("student(tau={:?})", cfg.tau),
        alpha: alpha.value(),
        data_digest: data_digest(data),
    };
    Ok(assemble(ChainStates::Matrix(states), mala, seed, descriptor, vec![tracker]))
}

/// Randomness consumed by one factor sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepNoise {
    pub xi_l: DMatrix<f64>,
    pub log_u_l: f64,
    pub xi_r: DMatrix<f64>,
    pub log_u_r: f64,
    pub gamma: GammaNoise,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GammaNoise {
    /// Unit-scale Gamma variates for the conjugate draw.
    Conjugate(Vec<f64>),
    /// Langevin noise for the move on `log γ`.
    Langevin { xi: DMatrix<f64>, log_u: f64 },
}

impl SweepNoise {
    pub fn draw<R: Rng + ?Sized>(d1: usize, d2: usize, cfg: &FactorPriorConfig, rng: &mut R) -> Result<Self> {
        let xi_l = std_normal_matrix(d1, cfg.k, rng);
        let log_u_l = rng.random::<f64>().ln();
        let xi_r = std_normal_matrix(d2, cfg.k, rng);
        let log_u_r = rng.random::<f64>().ln();
        let gamma = match cfg.family {
            GammaFamily::InverseGamma => {
                let unit = Gamma::new(gamma_conditional_shape(cfg, d1, d2), 1.0)
                    .map_err(|e| contract(e.to_string()))?;
                GammaNoise::Conjugate((0..cfg.k).map(|_| unit.sample(rng)).collect())
            }
            GammaFamily::Gamma => GammaNoise::Langevin {
                xi: std_normal_matrix(cfg.k, 1, rng),
                log_u: rng.random::<f64>().ln(),
            },
        };
        Ok(Self {
            xi_l,
            log_u_l,
            xi_r,
            log_u_r,
            gamma,
        })
    }

    /// Column `k` of the result is column `perm[k]` of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        let pc = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), perm.len(), |i, k| m[(i, perm[k])]);
        let gamma = match &self.gamma {
            GammaNoise::Conjugate(v) => GammaNoise::Conjugate(perm.iter().map(|&p| v[p]).collect()),
            GammaNoise::Langevin { xi, log_u } => GammaNoise::Langevin {
                xi: DMatrix::from_fn(perm.len(), 1, |k, _| xi[(perm[k], 0)]),
                log_u: *log_u,
            },
        };
        Self {
            xi_l: pc(&self.xi_l),
            log_u_l: self.log_u_l,
            xi_r: pc(&self.xi_r),
            log_u_r: self.log_u_r,
            gamma,
        }
    }
}

/// Outcomes of the three blocks of a sweep; `gamma` is `None` for the exact draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepOutcome {
    pub l: StepOutcome,
    pub r: StepOutcome,
    pub gamma: Option<StepOutcome>,
}

/// One Metropolis-within-Gibbs sweep over `(L, R, γ)` with given step sizes
/// `[h_L, h_R, h_θ]` and noise. Each block move leaves the fractional
/// posterior invariant.
pub fn factor_sweep(
    state: &mut FactorState,
    counts: &EntryCounts,
    alpha: f64,
    cfg: &FactorPriorConfig,
    steps: [f64; 3],
    noise: &SweepNoise,
    unadjusted: bool,
) -> Result<SweepOutcome> {
    let l = {
        let block = FactorBlock {
            counts,
            alpha,
            kind: FactorBlockKind::Left,
            other: &state.r,
            gamma: &state.gamma,
        };
        let mut p = MalaPoint::at(&block, state.l.clone());
        let out = langevin_move(&mut p, &block, steps[0], &noise.xi_l, noise.log_u_l, unadjusted);
        state.l = p.x;
        out
    };
    let r = {
        let block = FactorBlock {
            counts,
            alpha,
            kind: FactorBlockKind::Right,
            other: &state.l,
            gamma: &state.gamma,
        };
        let mut p = MalaPoint::at(&block, state.r.clone());
        let out = langevin_move(&mut p, &block, steps[1], &noise.xi_r, noise.log_u_r, unadjusted);
        state.r = p.x;
        out
    };
    let gamma = match &noise.gamma {
        GammaNoise::Conjugate(v) => {
            state.gamma = gamma_conditional_from_variates(state, cfg, v)?;
            None
        }
        GammaNoise::Langevin { xi, log_u } => {
            let energy = state.column_energy();
            let block = LogGammaBlock {
                cfg,
                energy: &energy,
                rows: state.d1() + state.d2(),
            };
            let theta = DMatrix::from_fn(state.k(), 1, |k, _| state.gamma[k].ln());
            let mut p = MalaPoint::at(&block, theta);
            let out = langevin_move(&mut p, &block, steps[2], xi, *log_u, unadjusted);
            state.gamma = DVector::from_fn(state.k(), |k, _| p.x[(k, 0)].exp());
            Some(out)
        }
    };
    Ok(SweepOutcome { l, r, gamma })
}

/// Initial factor state: i.i.d. `N(0, s)` factors and `γ = s`.
pub fn factor_initial_state<R: Rng + ?Sized>(
    d1: usize,
    d2: usize,
    cfg: &FactorPriorConfig,
    scale: f64,
    rng: &mut R,
) -> FactorState {
    let sd = scale.sqrt();
    let l = std_normal_matrix(d1, cfg.k, rng) * sd;
    let r = std_normal_matrix(d2, cfg.k, rng) * sd;
    FactorState {
        l,
        r,
        gamma: DVector::from_element(cfg.k, scale),
    }
}

fn factor_state_finite(s: &FactorState) -> bool {
    s.l.iter().chain(s.r.iter()).all(|v| v.is_finite()) && s.gamma.iter().all(|g| g.is_finite() && *g > 0.0)
}

/// Metropolis-within-Gibbs chain under the factorization prior.
pub fn run_factor_chain(
    data: &ObservationSet,
    alpha: FractionalExponent,
    cfg: &FactorPriorConfig,
    mala: &MalaConfig,
    seed: u64,
) -> Result<Chain> {
    mala.validate()?;
    let (d1, d2) = data.shape();
    let counts = data.counts();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = factor_initial_state(d1, d2, cfg, mala.factor_init_scale, &mut rng);
    let mut trackers = vec![BlockTracker::new("L", mala), BlockTracker::new("R", mala)];
    if cfg.family == GammaFamily::Gamma {
        trackers.push(BlockTracker::new("log_gamma", mala));
    }
    let mut states = Vec::with_capacity(mala.n_steps / mala.thin);
    for t in 0..mala.n_steps {
        let noise = SweepNoise::draw(d1, d2, cfg, &mut rng)?;
        let steps = [
            trackers[0].step,
            trackers[1].step,
            trackers.get(2).map_or(0.0, |b| b.step),
        ];
        let out = factor_sweep(&mut state, &counts, alpha.value(), cfg, steps, &noise, mala.unadjusted)?;
        if !factor_state_finite(&state) {
            return Err(divergent(t, "factor state"));
        }
        trackers[0].record(t, mala, &out.l);
        trackers[1].record(t, mala, &out.r);
        if let Some(g) = out.gamma {
            trackers[2].record(t, mala, &g);
        }
        if (t + 1) % mala.thin == 0 {
            states.push(state.clone());
        }
    }
    let descriptor = TargetDescriptor {
        prior: format!(
            "factor(k={},a={:?},b={:?},family={})",
            cfg.k,
            cfg.a,
            cfg.b,
            cfg.family.name()
        ),
        alpha: alpha.value(),
        data_digest: data_digest(data),
    };
    Ok(assemble(ChainStates::Factor(states), mala, seed, descriptor, trackers))
}
