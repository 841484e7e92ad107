//! Single runs, replications and sweeps.
//!
//! Seeding: the truth and `Π` of a config come from stream
//! `split_seed(master, 0)`; replication `k` draws its data from stream
//! `split_seed(master, k + 1)` and runs its chain with seed
//! `split_seed(split_seed(master, k + 1), 1)`. Grid points of a sweep share
//! the master seed, so the same `(r, B)` gives the same truth at every `n`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    check_concentration, concentration_threshold, probability_floor, rate_factorized, rate_student,
    BoundCheckResult, BoundSide, ConcentrationInput, FactorRateInput, StudentRateInput,
};
use crate::error::{contract, Result};
use crate::metrics::{c_kappa, frob_sq_normalized_raw, joint_divergence_raw, Divergence, DivergenceKind};
use crate::model::{FractionalExponent, MatrixParam, ObservationSet, SamplingDistribution};
use crate::samplers::{
    batch_means, posterior_mean, run_factor_chain, run_student_chain, split_seed, Chain,
    ChainDiagnostics, FunctionalEstimate,
};

use super::config::{ExperimentConfig, ResolvedPrior};
use super::synth::{generate_pi, generate_truth, sample_observations, Truth};

/// Posterior samples used for the pointwise lemma-transfer check.
pub const TRANSFER_CHECK_SAMPLES: usize = 100;

/// Relative slack for floating-point comparisons in sample-wise checks.
const REL_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config_digest: String,
    pub replication: usize,
    pub seed: u64,
    pub n: usize,
    pub d1: usize,
    pub d2: usize,
    pub r: usize,
    pub alpha: f64,
    pub prior: String,
    pub epsilon_n: f64,
    /// Normalized squared Frobenius error of the posterior mean.
    pub frob_sq_mean_est: f64,
    pub post_avg_frob_sq: FunctionalEstimate,
    pub post_avg_hellinger: FunctionalEstimate,
    pub post_avg_renyi: FunctionalEstimate,
    pub thresholds: BTreeMap<String, f64>,
    pub prob_floor: f64,
    pub c1: f64,
    /// Realized sup-norm over the truth and all kept samples.
    pub kappa: f64,
    pub accept_rate: f64,
    /// `frob_sq_mean_est ≤ post_avg_frob_sq + 3 MCSE`.
    pub jensen_ok: bool,
    pub transfer_checked: usize,
    pub transfer_violations: usize,
    /// Kept samples with squared Hellinger above the Rényi divergence (checked for α ≥ 1/2).
    pub hellinger_renyi_violations: usize,
    pub diagnostics: ChainDiagnostics,
}

/// Truth and `Π` shared by all replications of a config.
#[derive(Clone, Debug, PartialEq)]
pub struct Setting {
    pub truth: Truth,
    pub pi: SamplingDistribution,
}

pub fn make_setting(config: &ExperimentConfig) -> Result<Setting> {
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(config.master_seed, 0));
    let truth = generate_truth(config.d1, config.d2, config.r, config.bound, &mut rng)?;
    let pi = generate_pi(config.d1, config.d2, config.pi, &mut rng)?;
    Ok(Setting { truth, pi })
}

/// `ε_n` for the configured prior at the truth's rank.
pub fn epsilon_n(config: &ExperimentConfig, truth: &Truth) -> Result<f64> {
    Ok(match config.resolve_prior()? {
        ResolvedPrior::Student(_) => rate_student(&StudentRateInput {
            n: config.n,
            d1: config.d1,
            d2: config.d2,
            r: config.r,
            frob_mstar: truth.matrix.frobenius_norm(),
        }),
        ResolvedPrior::Factor(c) => rate_factorized(&FactorRateInput {
            n: config.n,
            d1: config.d1,
            d2: config.d2,
            r: config.r,
            a: c.a,
            bound: config.bound,
            constant: config.resolve_rate_constant()?,
        }),
    })
}

/// Data of replication `rep`.
pub fn replication_data(config: &ExperimentConfig, setting: &Setting, rep: usize) -> Result<(u64, ObservationSet)> {
    let seed = split_seed(config.master_seed, rep as u64 + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = sample_observations(&setting.truth.matrix, &setting.pi, config.n, &mut rng)?;
    Ok((seed, data))
}

pub fn run_chain(config: &ExperimentConfig, data: &ObservationSet, chain_seed: u64) -> Result<Chain> {
    let alpha = FractionalExponent::new(config.alpha)?;
    match config.resolve_prior()? {
        ResolvedPrior::Student(c) => run_student_chain(data, alpha, &c, &config.mala, chain_seed),
        ResolvedPrior::Factor(c) => run_factor_chain(data, alpha, &c, &config.mala, chain_seed),
    }
}

/// Replication `rep` of `config` (generate data, run the chain, evaluate).
pub fn run_replication(config: &ExperimentConfig, setting: &Setting, rep: usize) -> Result<RunResult> {
    config.validate()?;
    let (seed, data) = replication_data(config, setting, rep)?;
    let chain = run_chain(config, &data, split_seed(seed, 1))?;
    evaluate_chain(config, setting, &chain, rep, seed)
}

/// The first replication.
pub fn run_single(config: &ExperimentConfig) -> Result<RunResult> {
    let setting = make_setting(config)?;
    run_replication(config, &setting, 0)
}

/// Posterior integrals, thresholds and sample-wise checks for a finished chain.
pub fn evaluate_chain(
    config: &ExperimentConfig,
    setting: &Setting,
    chain: &Chain,
    rep: usize,
    seed: u64,
) -> Result<RunResult> {
    let truth = setting.truth.matrix.as_matrix();
    let probs = setting.pi.probs();
    let samples = chain.kept_matrices();
    let hell = DivergenceKind::paper(Divergence::HellingerSq)?;
    let renyi = DivergenceKind::paper(Divergence::Renyi(config.alpha))?;

    let mut frob = Vec::with_capacity(samples.len());
    let mut hel = Vec::with_capacity(samples.len());
    let mut ren = Vec::with_capacity(samples.len());
    let mut kappa = setting.truth.kappa;
    let mut hr_violations = 0;
    for m in &samples {
        frob.push(frob_sq_normalized_raw(m, truth));
        let h = joint_divergence_raw(m, truth, probs, hell);
        let d = joint_divergence_raw(m, truth, probs, renyi);
        if config.alpha >= 0.5 && h > d * (1.0 + REL_SLACK) + f64::MIN_POSITIVE {
            hr_violations += 1;
        }
        hel.push(h);
        ren.push(d);
        kappa = kappa.max(m.amax());
    }
    let est = |v: &[f64]| -> Result<FunctionalEstimate> {
        let (estimate, mcse) = batch_means(v)?;
        Ok(FunctionalEstimate {
            estimate,
            mcse,
            n_samples_used: v.len(),
        })
    };
    let post_avg_frob_sq = est(&frob)?;
    let post_avg_hellinger = est(&hel)?;
    let post_avg_renyi = est(&ren)?;

    let summary = posterior_mean(chain)?;
    let frob_sq_mean_est = frob_sq_normalized_raw(summary.mean_matrix.as_matrix(), truth);
    let jensen_ok = frob_sq_mean_est <= post_avg_frob_sq.estimate + 3.0 * post_avg_frob_sq.mcse + REL_SLACK * frob_sq_mean_est;

    let (transfer_checked, transfer_violations) = transfer_check(&samples, truth, probs, setting.pi.c1())?;

    let eps = epsilon_n(config, &setting.truth)?;
    let kappa_used = config.kappa.resolve(|| kappa);
    let ck = c_kappa(kappa_used)?;
    let mut thresholds = BTreeMap::new();
    for side in BoundSide::ALL {
        let t = concentration_threshold(eps, config.alpha, side, Some(setting.pi.c1()), Some(ck))?;
        thresholds.insert(side.name().to_string(), t);
    }
    Ok(RunResult {
        config_digest: config.digest(),
        replication: rep,
        seed,
        n: config.n,
        d1: config.d1,
        d2: config.d2,
        r: config.r,
        alpha: config.alpha,
        prior: config.resolve_prior()?.label(),
        epsilon_n: eps,
        frob_sq_mean_est,
        post_avg_frob_sq,
        post_avg_hellinger,
        post_avg_renyi,
        thresholds,
        prob_floor: probability_floor(config.n, eps),
        c1: setting.pi.c1(),
        kappa: kappa_used,
        accept_rate: chain.accept_rate,
        jensen_ok,
        transfer_checked,
        transfer_violations,
        hellinger_renyi_violations: hr_violations,
        diagnostics: chain.diagnostics.clone(),
    })
}

/// Pointwise check of normalized Frobenius ≤ Hellinger / (C1 C_κ) on evenly
/// spaced kept samples, with `κ` the realized sup-norm of the tested set.
pub fn transfer_check(
    samples: &[DMatrix<f64>],
    truth: &DMatrix<f64>,
    probs: &DMatrix<f64>,
    c1: f64,
) -> Result<(usize, usize)> {
    if samples.is_empty() {
        return Ok((0, 0));
    }
    let count = TRANSFER_CHECK_SAMPLES.min(samples.len());
    let picked: Vec<&DMatrix<f64>> = (0..count).map(|i| &samples[i * samples.len() / count]).collect();
    let kappa = picked.iter().fold(truth.amax(), |acc, m| acc.max(m.amax()));
    let ck = c_kappa(kappa)?;
    let hell = DivergenceKind::paper(Divergence::HellingerSq)?;
    let violations = picked
        .iter()
        .filter(|m| {
            let lhs = frob_sq_normalized_raw(m, truth);
            let rhs = joint_divergence_raw(m, truth, probs, hell) / (c1 * ck);
            lhs > rhs * (1.0 + REL_SLACK)
        })
        .count();
    Ok((count, violations))
}

/// Runs `jobs` on `workers` threads, preserving order.
fn run_parallel<T, F>(workers: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if workers <= 1 {
        return (0..jobs).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| contract(format!("thread pool: {e}")))?;
    pool.install(|| (0..jobs).into_par_iter().map(f).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicatedResult {
    pub config_digest: String,
    pub n: usize,
    pub r: usize,
    pub runs: Vec<RunResult>,
    pub checks: Vec<BoundCheckResult>,
}

/// Concentration checks over a set of runs of the same config.
pub fn bound_checks(config: &ExperimentConfig, runs: &[RunResult]) -> Result<Vec<BoundCheckResult>> {
    let first = runs.first().ok_or_else(|| contract("no runs to check"))?;
    // Largest realized κ across runs, i.e. the most conservative C_κ.
    let kappa = runs.iter().fold(0.0f64, |acc, r| acc.max(r.kappa));
    let ck = c_kappa(kappa)?;
    BoundSide::ALL
        .iter()
        .map(|&side| {
            let values: Vec<f64> = runs
                .iter()
                .map(|r| match side {
                    BoundSide::RenyiTheorem => r.post_avg_renyi.estimate,
                    BoundSide::HellingerCorollary => r.post_avg_hellinger.estimate,
                    BoundSide::FrobeniusTheorem => r.post_avg_frob_sq.estimate,
                })
                .collect();
            check_concentration(
                &values,
                &ConcentrationInput {
                    n: config.n,
                    epsilon_n: first.epsilon_n,
                    alpha: config.alpha,
                    side,
                    c1: Some(first.c1),
                    c_kappa: Some(ck),
                },
            )
        })
        .collect()
}

pub fn run_replicated(config: &ExperimentConfig) -> Result<ReplicatedResult> {
    let mut out = run_configs(std::slice::from_ref(config), config.workers)?;
    Ok(out.remove(0))
}

/// Replications of several configs as one parallel job list.
fn run_configs(configs: &[ExperimentConfig], workers: usize) -> Result<Vec<ReplicatedResult>> {
    let settings: Vec<Setting> = configs.iter().map(make_setting).collect::<Result<_>>()?;
    let mut jobs = Vec::new();
    for (c, cfg) in configs.iter().enumerate() {
        cfg.validate()?;
        for rep in 0..cfg.replications {
            jobs.push((c, rep));
        }
    }
    let results = run_parallel(workers, jobs.len(), |j| {
        let (c, rep) = jobs[j];
        run_replication(&configs[c], &settings[c], rep)
    })?;
    let mut grouped: Vec<Vec<RunResult>> = vec![Vec::new(); configs.len()];
    for ((c, _), r) in jobs.iter().zip(results) {
        grouped[*c].push(r);
    }
    configs
        .iter()
        .zip(grouped)
        .map(|(cfg, runs)| {
            Ok(ReplicatedResult {
                config_digest: cfg.digest(),
                n: cfg.n,
                r: cfg.r,
                checks: bound_checks(cfg, &runs)?,
                runs,
            })
        })
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.is_empty() {
        f64::NAN
    } else if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeEstimate {
    pub slope: f64,
    pub intercept: f64,
    /// `None` with fewer than three points.
    pub stderr: Option<f64>,
    pub points: usize,
}

/// Least-squares fit of `log y` on `log x`.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<SlopeEstimate> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(contract("a log-log fit needs at least two (x, y) pairs"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(contract("log-log fit needs positive finite values"));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(contract("log-log fit needs at least two distinct x values"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = (lx.len() > 2).then(|| {
        let rss: f64 = lx
            .iter()
            .zip(&ly)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        (rss / (k - 2.0) / sxx).sqrt()
    });
    Ok(SlopeEstimate {
        slope,
        intercept,
        stderr,
        points: lx.len(),
    })
}

/// Medians over the replications of one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub config_digest: String,
    pub n: usize,
    pub r: usize,
    pub epsilon_n: f64,
    pub median_post_avg_frob_sq: f64,
    pub median_frob_sq_mean_est: f64,
    pub median_post_avg_hellinger: f64,
    pub median_post_avg_renyi: f64,
    pub checks: Vec<BoundCheckResult>,
}

impl SweepPoint {
    pub fn from_replicated(rep: &ReplicatedResult) -> Self {
        let pick = |f: fn(&RunResult) -> f64| median(&rep.runs.iter().map(f).collect::<Vec<_>>());
        Self {
            config_digest: rep.config_digest.clone(),
            n: rep.n,
            r: rep.r,
            epsilon_n: rep.runs.first().map_or(f64::NAN, |r| r.epsilon_n),
            median_post_avg_frob_sq: pick(|r| r.post_avg_frob_sq.estimate),
            median_frob_sq_mean_est: pick(|r| r.frob_sq_mean_est),
            median_post_avg_hellinger: pick(|r| r.post_avg_hellinger.estimate),
            median_post_avg_renyi: pick(|r| r.post_avg_renyi.estimate),
            checks: rep.checks.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<RunResult>,
    pub points: Vec<SweepPoint>,
    /// Keyed by `<quantity>_vs_<n|r>`.
    pub slopes: BTreeMap<String, SlopeEstimate>,
    /// Grid steps in `n` where the median posterior-average error increased.
    pub monotone_inversions: usize,
}

/// Slopes against `n` (points at the base rank) and against `r` (points at
/// the base `n`) from grid-point medians.
pub fn sweep_slopes(points: &[SweepPoint], base_n: usize, base_r: usize) -> Result<(BTreeMap<String, SlopeEstimate>, usize)> {
    let mut slopes = BTreeMap::new();
    let mut along_n: Vec<&SweepPoint> = points.iter().filter(|p| p.r == base_r).collect();
    along_n.sort_by_key(|p| p.n);
    let mut inversions = 0;
    if along_n.len() >= 2 {
        let xs: Vec<f64> = along_n.iter().map(|p| p.n as f64).collect();
        let quantities: [(&str, fn(&SweepPoint) -> f64); 4] = [
            ("post_avg_frob_sq", |p| p.median_post_avg_frob_sq),
            ("frob_sq_mean_est", |p| p.median_frob_sq_mean_est),
            ("post_avg_hellinger", |p| p.median_post_avg_hellinger),
            ("post_avg_renyi", |p| p.median_post_avg_renyi),
        ];
        for (name, f) in quantities {
            let ys: Vec<f64> = along_n.iter().map(|p| f(p)).collect();
            if ys.iter().all(|y| *y > 0.0 && y.is_finite()) {
                slopes.insert(format!("{name}_vs_n"), fit_loglog(&xs, &ys)?);
            }
        }
        inversions = along_n
            .windows(2)
            .filter(|w| w[1].median_post_avg_frob_sq > w[0].median_post_avg_frob_sq)
            .count();
    }
    let mut along_r: Vec<&SweepPoint> = points.iter().filter(|p| p.n == base_n && p.r > 0).collect();
    along_r.sort_by_key(|p| p.r);
    if along_r.len() >= 2 {
        let xs: Vec<f64> = along_r.iter().map(|p| p.r as f64).collect();
        let ys: Vec<f64> = along_r.iter().map(|p| p.median_post_avg_frob_sq).collect();
        if ys.iter().all(|y| *y > 0.0 && y.is_finite()) {
            slopes.insert("post_avg_frob_sq_vs_r".into(), fit_loglog(&xs, &ys)?);
        }
    }
    Ok((slopes, inversions))
}

/// Replicated runs over `n_grid` at the base rank and over `r_grid` at the base `n`.
pub fn run_sweep(base: &ExperimentConfig, n_grid: &[usize], r_grid: &[usize]) -> Result<SweepReport> {
    let mut distinct = n_grid.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(contract("the n grid needs at least 4 distinct values"));
    }
    if distinct[0] == 0 || distinct[distinct.len() - 1] < 8 * distinct[0] {
        return Err(contract("the n grid must span at least a factor of 8"));
    }
    let mut grid: Vec<(usize, usize)> = distinct.iter().map(|&n| (n, base.r)).collect();
    for &r in r_grid {
        if !grid.contains(&(base.n, r)) {
            grid.push((base.n, r));
        }
    }
    let configs: Vec<ExperimentConfig> = grid.iter().map(|&(n, r)| base.at_point(n, r)).collect();
    let results = run_configs(&configs, base.workers)?;
    let points: Vec<SweepPoint> = results.iter().map(SweepPoint::from_replicated).collect();
    let (slopes, monotone_inversions) = sweep_slopes(&points, base.n, base.r)?;
    Ok(SweepReport {
        rows: results.into_iter().flat_map(|r| r.runs).collect(),
        points,
        slopes,
        monotone_inversions,
    })
}

/// Posterior-mean estimator for given data, exposed for the `fit` command.
pub fn fit_posterior_mean(config: &ExperimentConfig, data: &ObservationSet, seed: u64) -> Result<(Chain, MatrixParam)> {
    let chain = run_chain(config, data, seed)?;
    let mean = posterior_mean(&chain)?.mean_matrix;
    Ok((chain, mean))
}
