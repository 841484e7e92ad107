//! Posterior mean and functionals with batch-means standard errors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::model::MatrixParam;

use super::chain::Chain;

/// Number of batches for batch-means standard errors.
pub const BATCH_COUNT: usize = 20;

/// Mean of `values` and its batch-means standard error. With fewer values
/// than batches every value is its own batch.
pub fn batch_means(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(contract("no samples to average"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let batches = BATCH_COUNT.min(n);
    if batches < 2 {
        return Ok((mean, 0.0));
    }
    let size = n / batches;
    let bm: Vec<f64> = (0..batches)
        .map(|b| values[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = bm.iter().sum::<f64>() / batches as f64;
    let var = bm.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok((mean, (var / batches as f64).sqrt()))
}

/// The posterior-mean estimator with per-entry standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSummary {
    pub mean_matrix: MatrixParam,
    pub n_samples_used: usize,
    pub mc_standard_error: DMatrix<f64>,
}

pub fn posterior_mean(chain: &Chain) -> Result<PosteriorSummary> {
    mean_of_matrices(&chain.kept_matrices())
}

/// Entrywise mean and batch-means standard errors of a sample of matrices.
pub fn mean_of_matrices(samples: &[DMatrix<f64>]) -> Result<PosteriorSummary> {
    let first = samples
        .first()
        .ok_or_else(|| contract("chain has no post-burn-in samples"))?;
    let (d1, d2) = first.shape();
    let mut mean = DMatrix::zeros(d1, d2);
    let mut mcse = DMatrix::zeros(d1, d2);
    let mut column = vec![0.0; samples.len()];
    for i in 0..d1 {
        for j in 0..d2 {
            for (c, s) in column.iter_mut().zip(samples) {
                *c = s[(i, j)];
            }
            let (m, se) = batch_means(&column)?;
            mean[(i, j)] = m;
            mcse[(i, j)] = se;
        }
    }
    Ok(PosteriorSummary {
        mean_matrix: MatrixParam::new(mean)?,
        n_samples_used: samples.len(),
        mc_standard_error: mcse,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalEstimate {
    pub estimate: f64,
    pub mcse: f64,
    pub n_samples_used: usize,
}

/// Posterior average of `g` over post-burn-in (induced) matrices.
pub fn posterior_functional<G: Fn(&DMatrix<f64>) -> f64>(chain: &Chain, g: G) -> Result<FunctionalEstimate> {
    let values: Vec<f64> = chain.kept_matrices().iter().map(g).collect();
    let (estimate, mcse) = batch_means(&values)?;
    Ok(FunctionalEstimate {
        estimate,
        mcse,
        n_samples_used: values.len(),
    })
}
