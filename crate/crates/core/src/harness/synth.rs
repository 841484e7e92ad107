//! Synthetic truth, sampling distributions and observations.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::model::{logistic, MatrixParam, Observation, ObservationSet, SamplingDistribution};
use crate::priors::{build_truth, TruthSpec};

/// Ground truth with its certificate and realized sup-norm `κ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub spec: TruthSpec,
    pub matrix: MatrixParam,
    pub kappa: f64,
}

/// `Ū`, `V̄` with i.i.d. `U[−B, B]` entries in the first `r` of
/// `min(d1, d2)` columns and zeros elsewhere.
pub fn generate_truth<R: Rng + ?Sized>(d1: usize, d2: usize, r: usize, bound: f64, rng: &mut R) -> Result<Truth> {
    let width = d1.min(d2);
    if d1 == 0 || d2 == 0 {
        return Err(contract("dimensions must be positive"));
    }
    if r > width {
        return Err(contract(format!("rank {r} exceeds min(d1, d2) = {width}")));
    }
    let mut draw = |rows: usize| {
        let mut f = DMatrix::zeros(rows, width);
        for k in 0..r {
            for i in 0..rows {
                f[(i, k)] = rng.random_range(-bound..=bound);
            }
        }
        f
    };
    let ubar = draw(d1);
    let vbar = draw(d2);
    let spec = TruthSpec { r, bound, ubar, vbar };
    let matrix = build_truth(&spec)?;
    let kappa = matrix.sup_norm();
    Ok(Truth { spec, matrix, kappa })
}

/// How the sampling distribution is generated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PiSpec {
    Uniform,
    /// Weights drawn from `U[1, s]`, so the max/min ratio is at most `s`.
    Tilted(f64),
}

impl PiSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PiSpec::Tilted(s) if !(s >= 1.0 && s.is_finite()) => {
                Err(contract(format!("tilt strength must be at least 1, got {s}")))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            PiSpec::Uniform => "uniform".into(),
            PiSpec::Tilted(s) => format!("tilted({s:?})"),
        }
    }
}

pub fn generate_pi<R: Rng + ?Sized>(d1: usize, d2: usize, spec: PiSpec, rng: &mut R) -> Result<SamplingDistribution> {
    spec.validate()?;
    match spec {
        PiSpec::Uniform => Ok(SamplingDistribution::uniform(d1, d2)),
        PiSpec::Tilted(s) if s == 1.0 => Ok(SamplingDistribution::uniform(d1, d2)),
        PiSpec::Tilted(s) => {
            let w = DMatrix::from_fn(d1, d2, |_, _| rng.random_range(1.0..=s));
            SamplingDistribution::from_weights(w)
        }
    }
}

/// `n` i.i.d. entries from `Π` (alias method) with logistic labels.
pub fn sample_observations<R: Rng + ?Sized>(
    truth: &MatrixParam,
    pi: &SamplingDistribution,
    n: usize,
    rng: &mut R,
) -> Result<ObservationSet> {
    if truth.shape() != pi.shape() {
        return Err(contract(format!(
            "truth is {:?} but Π is {:?}",
            truth.shape(),
            pi.shape()
        )));
    }
    let (d1, d2) = truth.shape();
    // Row-major flattening of Π.
    let weights: Vec<f64> = (0..d1).flat_map(|i| (0..d2).map(move |j| (i, j))).map(|(i, j)| pi.get(i, j)).collect();
    let alias = WeightedAliasIndex::new(weights).map_err(|e| contract(e.to_string()))?;
    let mut obs = Vec::with_capacity(n);
    for _ in 0..n {
        let idx = alias.sample(rng);
        let (i, j) = (idx / d2, idx % d2);
        let p = logistic(truth.get(i, j));
        let y = if rng.random::<f64>() < p { 1 } else { -1 };
        obs.push(Observation::new(i, j, y)?);
    }
    ObservationSet::new(d1, d2, obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::numerical_rank;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rank_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = generate_truth(4, 3, 0, 1.0, &mut rng).unwrap();
        assert_eq!(t.kappa, 0.0);
        assert!(t.matrix.as_matrix().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn full_rank_and_sup_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let t = generate_truth(3, 3, 3, 1.0, &mut rng).unwrap();
            assert_eq!(numerical_rank(t.matrix.as_matrix(), 1e-10), 3);
            assert!(t.kappa <= 3.0);
        }
        assert!(generate_truth(3, 2, 3, 1.0, &mut rng).is_err());
    }

    #[test]
    fn pi_specs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = generate_pi(2, 2, PiSpec::Uniform, &mut rng).unwrap();
        assert!(u.probs().iter().all(|p| *p == 0.25));
        assert_eq!(u.c1(), 0.25);
        assert_eq!(generate_pi(2, 3, PiSpec::Tilted(1.0), &mut rng).unwrap(), SamplingDistribution::uniform(2, 3));
        assert!(PiSpec::Tilted(0.5).validate().is_err());
        let t = generate_pi(3, 3, PiSpec::Tilted(4.0), &mut rng).unwrap();
        let ratio = t.probs().max() / t.c1();
        assert!(ratio <= 4.0 + 1e-12 && t.c1() > 0.0);
    }

    #[test]
    fn saturated_truth_gives_positive_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = MatrixParam::new(DMatrix::from_element(2, 2, 50.0)).unwrap();
        let data = sample_observations(&m, &SamplingDistribution::uniform(2, 2), 10_000, &mut rng).unwrap();
        assert!(data.observations().iter().all(|o| o.y == 1));
    }

    #[test]
    fn frequencies_match_pi_and_fair_coin() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pi = generate_pi(2, 3, PiSpec::Tilted(4.0), &mut rng).unwrap();
        let n = 200_000;
        let data = sample_observations(&MatrixParam::zeros(2, 3), &pi, n, &mut rng).unwrap();
        let counts = data.counts();
        for i in 0..2 {
            for j in 0..3 {
                let p = pi.get(i, j);
                let se = (p * (1.0 - p) / n as f64).sqrt();
                assert!((counts.total[(i, j)] / n as f64 - p).abs() < 4.0 * se);
            }
        }
        let pos = counts.positive.sum() / n as f64;
        assert!((pos - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt());
    }
}
