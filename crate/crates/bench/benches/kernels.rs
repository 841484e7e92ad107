use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use onebit::harness::{generate_truth, sample_observations};
use onebit::metrics::{joint_divergence, Divergence, DivergenceKind};
use onebit::samplers::{
    factor_initial_state, factor_sweep, mala_step, student_joint_log_target, MalaPoint, StudentTarget,
    SweepNoise,
};
use onebit::{EntryCounts, FactorPriorConfig, GammaFamily, SamplingDistribution};

fn counts(d: usize, n: usize, seed: u64) -> (DMatrix<f64>, EntryCounts) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = generate_truth(d, d, 1, 1.0, &mut rng).unwrap();
    let pi = SamplingDistribution::uniform(d, d);
    let data = sample_observations(&truth.matrix, &pi, n, &mut rng).unwrap();
    (truth.matrix.as_matrix().clone(), data.counts())
}

fn log_target(c: &mut Criterion) {
    let mut group = c.benchmark_group("student_log_target");
    for d in [12, 30] {
        let (m, counts) = counts(d, 4000, 1);
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| {
            b.iter(|| student_joint_log_target(&m, &counts, 0.99, 0.01))
        });
    }
    group.finish();
}

fn mala(c: &mut Criterion) {
    let mut group = c.benchmark_group("mala_step");
    for spectral in [false, true] {
        let (m, counts) = counts(12, 4000, 2);
        let target = StudentTarget::new(counts, 0.99, 0.01, spectral);
        let mut point = MalaPoint::at(&target, m);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let label = if spectral { "spectral" } else { "identity" };
        group.bench_function(label, |b| b.iter(|| mala_step(&mut point, &target, 1e-3, &mut rng)));
    }
    group.finish();
}

fn divergence(c: &mut Criterion) {
    let mut group = c.benchmark_group("joint_divergence");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = generate_truth(100, 100, 3, 1.0, &mut rng).unwrap().matrix;
    let b = generate_truth(100, 100, 3, 1.0, &mut rng).unwrap().matrix;
    let pi = SamplingDistribution::uniform(100, 100);
    for (name, kind) in [
        ("kl", Divergence::Kl),
        ("hellinger", Divergence::HellingerSq),
        ("renyi", Divergence::Renyi(0.99)),
    ] {
        let kind = DivergenceKind::paper(kind).unwrap();
        group.bench_function(name, |bch| bch.iter(|| joint_divergence(&a, &b, &pi, kind).unwrap()));
    }
    group.finish();
}

fn factor(c: &mut Criterion) {
    let mut group = c.benchmark_group("factor_sweep");
    let (_, counts) = counts(12, 4000, 5);
    for family in [GammaFamily::Gamma, GammaFamily::InverseGamma] {
        let cfg = FactorPriorConfig::new(6, 1.0, 0.01, family).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut state = factor_initial_state(12, 12, &cfg, 1.0, &mut rng);
        group.bench_function(family.name(), |b| {
            b.iter(|| {
                let noise = SweepNoise::draw(12, 12, &cfg, &mut rng).unwrap();
                factor_sweep(&mut state, &counts, 0.99, &cfg, [1e-3, 1e-3, 1e-2], &noise, false).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, log_target, mala, divergence, factor);
criterion_main!(benches);
