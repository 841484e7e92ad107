mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{normal_matrix, random_data};
use onebit::harness::{generate_truth, sample_observations};
use onebit::priors::sample_student_prior;
use onebit::samplers::{
    batch_means, factor_initial_state, factor_sweep, mala_step, posterior_functional, posterior_mean,
    run_factor_chain, run_student_chain, ChainStates, LogTarget, MalaPoint, StudentTarget, SweepNoise,
};
use onebit::{
    FactorPriorConfig, FactorState, FractionalExponent, GammaFamily, MalaConfig, MatrixParam, ObservationSet,
    SamplingDistribution,
    StudentPriorConfig,
};

fn alpha(a: f64) -> FractionalExponent {
    FractionalExponent::new(a).unwrap()
}

fn mala(n_steps: usize) -> MalaConfig {
    MalaConfig {
        step_size: 0.5,
        ..MalaConfig::with_steps(n_steps)
    }
}

#[test]
fn scalar_prior_chain_is_centred() {
    let data = ObservationSet::empty(1, 1);
    let cfg = StudentPriorConfig::new(1.0).unwrap();
    let chain = run_student_chain(&data, alpha(0.5), &cfg, &mala(1_000_000), 21).unwrap();
    let mean = posterior_functional(&chain, |m| m[(0, 0)]).unwrap();
    assert!(mean.estimate.abs() <= 3.0 * mean.mcse, "{mean:?}");
}

#[test]
fn small_prior_chain_mean_is_zero() {
    let data = ObservationSet::empty(2, 2);
    let cfg = StudentPriorConfig::new(0.5).unwrap();
    let chain = run_student_chain(&data, alpha(0.99), &cfg, &mala(200_000), 22).unwrap();
    let s = posterior_mean(&chain).unwrap();
    for (m, se) in s.mean_matrix.as_matrix().iter().zip(s.mc_standard_error.iter()) {
        assert!(m.abs() <= 3.0 * se, "entry {m} with mcse {se}");
    }
}

#[test]
fn prior_chain_matches_exact_draws() {
    // A bounded statistic, since ‖M‖² has no finite variance under this prior.
    let (d1, d2, tau) = (3, 2, 0.7);
    let cfg = StudentPriorConfig::new(tau).unwrap();
    let g = |m: &DMatrix<f64>| {
        let f = m.norm_squared();
        f / (tau * tau + f)
    };
    let chain = run_student_chain(&ObservationSet::empty(d1, d2), alpha(0.5), &cfg, &mala(400_000), 23).unwrap();
    let from_chain = posterior_functional(&chain, g).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let draws: Vec<f64> = (0..100_000)
        .map(|_| g(sample_student_prior(&cfg, d1, d2, &mut rng).unwrap().as_matrix()))
        .collect();
    let exact_mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|x| (x - exact_mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
    let se = (from_chain.mcse.powi(2) + var / draws.len() as f64).sqrt();
    assert!(
        (from_chain.estimate - exact_mean).abs() <= 3.0 * se,
        "chain {} vs exact {exact_mean} (se {se})",
        from_chain.estimate
    );
}

#[test]
fn vanishing_step_is_always_accepted() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let data = random_data(3, 3, 50, &mut rng);
    let cfg = StudentPriorConfig::new(0.5).unwrap();
    let cfg_mala = MalaConfig {
        step_size: 1e-8,
        adapt: false,
        anneal: false,
        ..MalaConfig::with_steps(5000)
    };
    let chain = run_student_chain(&data, alpha(0.99), &cfg, &cfg_mala, 26).unwrap();
    assert!(chain.accept_rate > 0.999, "{}", chain.accept_rate);
}

#[test]
fn chains_are_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let data = random_data(3, 4, 200, &mut rng);
    let cfg = StudentPriorConfig::new(0.1).unwrap();
    let a = run_student_chain(&data, alpha(0.9), &cfg, &mala(3000), 28).unwrap();
    let b = run_student_chain(&data, alpha(0.9), &cfg, &mala(3000), 28).unwrap();
    assert_eq!(a, b);
    let c = run_student_chain(&data, alpha(0.9), &cfg, &mala(3000), 29).unwrap();
    assert_ne!(a.states, c.states);

    for family in [GammaFamily::Gamma, GammaFamily::InverseGamma] {
        let fcfg = FactorPriorConfig::new(2, 1.0, 0.5, family).unwrap();
        let a = run_factor_chain(&data, alpha(0.9), &fcfg, &mala(2000), 30).unwrap();
        let b = run_factor_chain(&data, alpha(0.9), &fcfg, &mala(2000), 30).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn induced_matrix_is_invariant_under_column_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let data = random_data(4, 5, 300, &mut rng);
    let counts = data.counts();
    let perm = [2usize, 0, 1];
    for family in [GammaFamily::Gamma, GammaFamily::InverseGamma] {
        let cfg = FactorPriorConfig::new(3, 1.5, 0.5, family).unwrap();
        let mut s1 = factor_initial_state(4, 5, &cfg, 1.0, &mut rng);
        let mut s2 = s1.permute_columns(&perm);
        for _ in 0..300 {
            let noise = SweepNoise::draw(4, 5, &cfg, &mut rng).unwrap();
            let steps = [0.05, 0.05, 0.1];
            factor_sweep(&mut s1, &counts, 0.9, &cfg, steps, &noise, false).unwrap();
            factor_sweep(&mut s2, &counts, 0.9, &cfg, steps, &noise.permute_columns(&perm), false).unwrap();
            let diff = (s1.induced() - s2.induced()).amax();
            assert!(diff < 1e-9, "{family:?}: induced matrices differ by {diff}");
        }
    }
}

/// Scalar target built from the Student model with a handful of labels.
fn scalar_target() -> StudentTarget {
    let data = common::scalar_data(3, 2);
    StudentTarget::new(data.counts(), 0.99, 1.0, false)
}

#[test]
fn empirical_kernel_satisfies_detailed_balance() {
    let target = scalar_target();
    let (lo, hi, bins) = (-3.0, 3.0, 12usize);
    let bin = |x: f64| -> Option<usize> {
        if (lo..hi).contains(&x) {
            Some(((x - lo) / (hi - lo) * bins as f64) as usize)
        } else {
            None
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut point = MalaPoint::at(&target, DMatrix::zeros(1, 1));
    let mut counts = vec![vec![0u64; bins]; bins];
    let mut prev = bin(point.x[(0, 0)]);
    for _ in 0..2_000_000 {
        mala_step(&mut point, &target, 0.8, &mut rng);
        let next = bin(point.x[(0, 0)]);
        if let (Some(i), Some(j)) = (prev, next) {
            counts[i][j] += 1;
        }
        prev = next;
    }
    let mut checked = 0;
    for i in 0..bins {
        for j in (i + 1)..bins {
            let (a, b) = (counts[i][j] as f64, counts[j][i] as f64);
            if a + b < 100.0 {
                continue;
            }
            checked += 1;
            assert!((a - b).abs() <= 4.0 * (a + b).sqrt(), "flux {i}->{j} = {a} but {j}->{i} = {b}");
        }
    }
    assert!(checked >= 20, "only {checked} bin pairs had enough transitions");
}

#[test]
fn large_steps_keep_the_standard_normal() {
    // Unadjusted Langevin at this step would inflate the variance to 4.
    struct Tilted;
    impl LogTarget for Tilted {
        fn shape(&self) -> (usize, usize) {
            (1, 1)
        }
        fn log_density_and_grad(&self, x: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
            let v = x[(0, 0)];
            (-0.5 * v * v, DMatrix::from_element(1, 1, -v))
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut point = MalaPoint::at(&Tilted, DMatrix::zeros(1, 1));
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let n = 400_000;
    for _ in 0..n {
        mala_step(&mut point, &Tilted, 1.5, &mut rng);
        let v = point.x[(0, 0)];
        sum += v;
        sum_sq += v * v;
    }
    // Exact MALA keeps the standard normal even with a large step.
    let var = sum_sq / n as f64 - (sum / n as f64).powi(2);
    assert!((var - 1.0).abs() < 0.05, "variance {var}");
}

#[test]
fn inverse_gamma_prior_moments_at_unit_size() {
    let (a, b) = (5.0, 4.0);
    let cfg = FactorPriorConfig::new(1, a, b, GammaFamily::InverseGamma).unwrap();
    let chain = run_factor_chain(&ObservationSet::empty(1, 1), alpha(0.5), &cfg, &mala(100_000), 34).unwrap();
    let ChainStates::Factor(states) = &chain.states else {
        panic!("factor chain stores factor states")
    };
    let kept = &states[chain.first_kept..];
    let g: Vec<f64> = kept.iter().map(|s| s.gamma[0]).collect();
    let g2: Vec<f64> = g.iter().map(|x| x * x).collect();
    let mean = b / (a - 1.0);
    let second = b * b / ((a - 1.0).powi(2) * (a - 2.0)) + mean * mean;
    let (m1, se1) = batch_means(&g).unwrap();
    let (m2, se2) = batch_means(&g2).unwrap();
    assert!((m1 - mean).abs() <= 3.0 * se1, "E γ {m1} vs {mean} (mcse {se1})");
    assert!((m2 - second).abs() <= 3.0 * se2, "E γ² {m2} vs {second} (mcse {se2})");
}

/// Rank-one truth `u vᵀ` with `|u_i|, |v_j| ∈ [0.5, 1]` and random signs, so
/// no entry is close to zero.
fn separated_truth(d: usize, rng: &mut ChaCha8Rng) -> MatrixParam {
    let mut side = || {
        DVector::from_fn(d, |_, _| {
            let mag = rng.random_range(0.5..1.0);
            if rng.random::<bool>() { mag } else { -mag }
        })
    };
    let (u, v) = (side(), side());
    MatrixParam::new(&u * v.transpose()).unwrap()
}

fn recovery_wins(
    d: usize,
    n: usize,
    truth: impl Fn(&mut ChaCha8Rng) -> MatrixParam,
    run: impl Fn(&ObservationSet, u64) -> DMatrix<f64>,
) -> usize {
    let mut wins = 0;
    for rep in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + rep);
        let truth = truth(&mut rng);
        let pi = SamplingDistribution::uniform(d, d);
        let data = sample_observations(&truth, &pi, n, &mut rng).unwrap();
        let est = run(&data, 2000 + rep);
        let err = (est - truth.as_matrix()).norm();
        if err < truth.frobenius_norm() {
            wins += 1;
        }
    }
    wins
}

#[test]
fn student_posterior_mean_beats_zero() {
    let n = 2000;
    let cfg = StudentPriorConfig::auto(n);
    // With τ = 1/n the exact posterior sits on the spike at zero when the
    // signal is weak, so the truth keeps its entries away from zero.
    let wins = recovery_wins(2, n, |rng| separated_truth(2, rng), |data, seed| {
        let chain = run_student_chain(data, alpha(0.99), &cfg, &mala(20_000), seed).unwrap();
        posterior_mean(&chain).unwrap().mean_matrix.into_matrix()
    });
    assert!(wins >= 19, "{wins}/20");
}

#[test]
fn factor_posterior_mean_beats_zero() {
    let n = 4000;
    for family in [GammaFamily::InverseGamma, GammaFamily::Gamma] {
        let cfg = FactorPriorConfig::new(2, 1.0, 0.1, family).unwrap();
        let truth = |rng: &mut ChaCha8Rng| generate_truth(4, 4, 1, 1.0, rng).unwrap().matrix;
        let wins = recovery_wins(4, n, truth, |data, seed| {
            let chain = run_factor_chain(data, alpha(0.99), &cfg, &mala(10_000), seed).unwrap();
            posterior_mean(&chain).unwrap().mean_matrix.into_matrix()
        });
        assert!(wins >= 19, "{family:?}: {wins}/20");
    }
}

#[test]
fn thinning_then_averaging_matches_direct_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let samples: Vec<DMatrix<f64>> = (0..600).map(|_| normal_matrix(2, 3, 1.0, &mut rng)).collect();
    let thinned: Vec<DMatrix<f64>> = samples.iter().step_by(3).cloned().collect();
    let direct = thinned.iter().fold(DMatrix::zeros(2, 3), |acc, m| acc + m) / thinned.len() as f64;
    let via = onebit::samplers::mean_of_matrices(&thinned).unwrap().mean_matrix;
    assert!((direct - via.as_matrix()).amax() < 1e-12);
}

#[test]
fn factor_state_rejects_mismatched_columns() {
    let l = DMatrix::zeros(2, 2);
    let r = DMatrix::zeros(3, 1);
    assert!(FactorState::new(l, r, DVector::from_element(2, 1.0)).is_err());
}

