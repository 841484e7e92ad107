//! Logistic observation model, observation data and the fractional
//! log-likelihood.
//!
//! A binary label `y ∈ {-1, +1}` observed at entry `(i, j)` of a logit-scale
//! matrix `M` equals `+1` with probability `f(M_ij)`, where `f` is the logistic
//! link. Observed entries are drawn i.i.d. (with replacement) from a sampling
//! distribution over `[d1] × [d2]`.
//!
//! Indices are 0-based in memory and 1-based in every file format; the
//! conversion happens in the CSV readers and writers only.

use std::fmt;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Tolerance on the total mass of a sampling distribution.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Logistic link `e^x / (1 + e^x)`; never evaluates `e^x` for positive `x`.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log f(x) = -log(1 + e^{-x})`, stable for any finite `x`.
#[inline]
pub fn log_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// A logit-scale parameter matrix of shape `d1 × d2` with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixParam(DMatrix<f64>);

impl MatrixParam {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(contract("matrix dimensions must be at least 1×1"));
        }
        if let Some(bad) = entries.iter().find(|v| !v.is_finite()) {
            return Err(contract(format!("matrix entry {bad} is not finite")));
        }
        Ok(Self(entries))
    }

    pub fn zeros(d1: usize, d2: usize) -> Self {
        assert!(d1 > 0 && d2 > 0, "matrix dimensions must be at least 1×1");
        Self(DMatrix::zeros(d1, d2))
    }

    pub fn from_row_slice(d1: usize, d2: usize, data: &[f64]) -> Result<Self> {
        if data.len() != d1 * d2 {
            return Err(contract(format!(
                "expected {} entries for a {d1}×{d2} matrix, got {}",
                d1 * d2,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(d1, d2, data))
    }

    /// Wraps a matrix produced by internal arithmetic without re-validating.
    pub(crate) fn from_matrix_unchecked(m: DMatrix<f64>) -> Self {
        debug_assert!(m.iter().all(|v| v.is_finite()));
        Self(m)
    }

    pub fn d1(&self) -> usize {
        self.0.nrows()
    }

    pub fn d2(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// `max |M_ij|`.
    pub fn sup_norm(&self) -> f64 {
        self.0.amax()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// Matrix of observation probabilities `f(M_ij)`.
    pub fn probabilities(&self) -> DMatrix<f64> {
        self.0.map(logistic)
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.0.len());
        for i in 0..self.d1() {
            for j in 0..self.d2() {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    /// Reads a headerless CSV of `d1` rows by `d2` columns.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let rows = read_numeric_rows(reader)?;
        let d1 = rows.len();
        let d2 = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d2) {
            return Err(contract("ragged matrix CSV"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Self::from_row_slice(d1, d2, &flat)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_numeric_rows(writer, &self.0)
    }
}

/// A single observed label. Indices are 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub i: usize,
    pub j: usize,
    pub y: i8,
}

impl Observation {
    pub fn new(i: usize, j: usize, y: i8) -> Result<Self> {
        check_label(y)?;
        Ok(Self { i, j, y })
    }

    pub fn is_positive(&self) -> bool {
        self.y == 1
    }
}

fn check_label(y: i8) -> Result<()> {
    if y == 1 || y == -1 {
        Ok(())
    } else {
        Err(contract(format!("label must be -1 or +1, got {y}")))
    }
}

/// An ordered multiset of observations on a `d1 × d2` grid.
///
/// Repeated entries are kept; sampling is with replacement.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    d1: usize,
    d2: usize,
    obs: Vec<Observation>,
}

#[derive(Serialize, Deserialize)]
struct ObservationRecord {
    i: usize,
    j: usize,
    y: i8,
}

impl ObservationSet {
    pub fn new(d1: usize, d2: usize, obs: Vec<Observation>) -> Result<Self> {
        if d1 == 0 || d2 == 0 {
            return Err(contract("grid dimensions must be at least 1×1"));
        }
        for (s, o) in obs.iter().enumerate() {
            if o.i >= d1 || o.j >= d2 {
                return Err(contract(format!(
                    "observation {s} at ({}, {}) outside the {d1}×{d2} grid",
                    o.i + 1,
                    o.j + 1
                )));
            }
            check_label(o.y)?;
        }
        Ok(Self { d1, d2, obs })
    }

    pub fn empty(d1: usize, d2: usize) -> Self {
        Self {
            d1,
            d2,
            obs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    pub fn observations(&self) -> &[Observation] {
        &self.obs
    }

    /// Splits into `obs[..at]` and `obs[at..]`.
    pub fn split_at(&self, at: usize) -> (Self, Self) {
        let (a, b) = self.obs.split_at(at.min(self.obs.len()));
        (
            Self {
                d1: self.d1,
                d2: self.d2,
                obs: a.to_vec(),
            },
            Self {
                d1: self.d1,
                d2: self.d2,
                obs: b.to_vec(),
            },
        )
    }

    /// Per-entry positive and total counts.
    pub fn counts(&self) -> EntryCounts {
        let mut positive = DMatrix::zeros(self.d1, self.d2);
        let mut total = DMatrix::zeros(self.d1, self.d2);
        for o in &self.obs {
            total[(o.i, o.j)] += 1.0;
            if o.is_positive() {
                positive[(o.i, o.j)] += 1.0;
            }
        }
        EntryCounts {
            positive,
            total,
            n: self.obs.len(),
        }
    }

    /// Reads the `i,j,y` CSV format (1-based indices).
    pub fn read_csv<R: Read>(reader: R, d1: usize, d2: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["i", "j", "y"] {
            return Err(contract(format!(
                "observation CSV header must be `i,j,y`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut obs = Vec::new();
        for rec in rdr.deserialize::<ObservationRecord>() {
            let rec = rec?;
            if rec.i == 0 || rec.j == 0 {
                return Err(contract("observation indices are 1-based"));
            }
            obs.push(Observation::new(rec.i - 1, rec.j - 1, rec.y)?);
        }
        Self::new(d1, d2, obs)
    }

    /// Reads the `i,j,y` CSV format and takes the grid from the largest index seen.
    pub fn read_csv_infer_shape<R: Read>(reader: R) -> Result<Self> {
        let loose = Self::read_csv(reader, usize::MAX, usize::MAX)?;
        let d1 = loose.obs.iter().map(|o| o.i + 1).max().unwrap_or(1);
        let d2 = loose.obs.iter().map(|o| o.j + 1).max().unwrap_or(1);
        Self::new(d1, d2, loose.obs)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for o in &self.obs {
            wtr.serialize(ObservationRecord {
                i: o.i + 1,
                j: o.j + 1,
                y: o.y,
            })?;
        }
        if self.obs.is_empty() {
            wtr.write_record(["i", "j", "y"])?;
        }
        wtr.flush().map_err(crate::error::io_err("flushing observation CSV"))?;
        Ok(())
    }
}

/// Observations aggregated by entry. The likelihood only depends on these counts.
#[derive(Clone, Debug, PartialEq)]
pub struct EntryCounts {
    pub positive: DMatrix<f64>,
    pub total: DMatrix<f64>,
    pub n: usize,
}

impl EntryCounts {
    pub fn shape(&self) -> (usize, usize) {
        self.total.shape()
    }

    /// Unfractionated log-likelihood from counts.
    pub fn log_likelihood(&self, m: &DMatrix<f64>) -> f64 {
        debug_assert_eq!(m.shape(), self.shape());
        let mut acc = 0.0;
        for ((&x, &pos), &tot) in m.iter().zip(self.positive.iter()).zip(self.total.iter()) {
            if tot > 0.0 {
                acc += pos * log_logistic(x) + (tot - pos) * log_logistic(-x);
            }
        }
        acc
    }

    /// Gradient of the unfractionated log-likelihood: `n⁺_ij − n_ij f(M_ij)`.
    pub fn log_likelihood_grad(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        debug_assert_eq!(m.shape(), self.shape());
        let mut g = DMatrix::zeros(m.nrows(), m.ncols());
        for (k, gk) in g.iter_mut().enumerate() {
            let tot = self.total[k];
            if tot > 0.0 {
                *gk = self.positive[k] - tot * logistic(m[k]);
            }
        }
        g
    }
}

/// Marginal law `Π` of the observed entry index, with minimum entry `C1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingDistribution {
    probs: DMatrix<f64>,
    c1: f64,
}

impl SamplingDistribution {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(contract("sampling distribution must be at least 1×1"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(contract("sampling probabilities must be finite and nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(contract(format!(
                "sampling probabilities sum to {total}, expected 1 within {PROB_SUM_TOL:e}"
            )));
        }
        let c1 = probs.min();
        Ok(Self { probs, c1 })
    }

    pub fn uniform(d1: usize, d2: usize) -> Self {
        let p = 1.0 / (d1 * d2) as f64;
        Self {
            probs: DMatrix::from_element(d1, d2, p),
            c1: p,
        }
    }

    /// Normalizes nonnegative weights into a distribution.
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(contract("weights must be finite, nonnegative and not all zero"));
        }
        let mut probs = weights / total;
        // Fold the rounding residue into the largest entry so the sum is 1.
        let residue = 1.0 - probs.iter().sum::<f64>();
        let imax = probs
            .iter()
            .enumerate()
            .fold(0, |best, (k, v)| if *v > probs[best] { k } else { best });
        probs[imax] += residue;
        Self::new(probs)
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn shape(&self) -> (usize, usize) {
        self.probs.shape()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[(i, j)]
    }

    /// Headerless CSV, `d1` rows of `d2` probabilities.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let m = MatrixParam::read_csv(reader)?;
        Self::new(m.into_matrix())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_numeric_rows(writer, &self.probs)
    }
}

/// The tempering exponent `α ∈ (0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct FractionalExponent(f64);

impl FractionalExponent {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self(alpha))
        } else {
            Err(contract(format!("alpha must lie in (0, 1), got {alpha}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for FractionalExponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn check_indices(m: &MatrixParam, data: &ObservationSet) -> Result<()> {
    if m.shape() != data.shape() {
        return Err(contract(format!(
            "observations live on a {}×{} grid but the matrix is {}×{}",
            data.d1,
            data.d2,
            m.d1(),
            m.d2()
        )));
    }
    Ok(())
}

/// Plain (unfractionated) log-likelihood `log L_n(M)`.
pub fn log_likelihood(m: &MatrixParam, data: &ObservationSet) -> Result<f64> {
    check_indices(m, data)?;
    Ok(data
        .obs
        .iter()
        .map(|o| {
            let x = m.get(o.i, o.j);
            if o.is_positive() {
                log_logistic(x)
            } else {
                log_logistic(-x)
            }
        })
        .sum())
}

/// `α · log L_n(M)`.
pub fn frac_log_likelihood(
    m: &MatrixParam,
    data: &ObservationSet,
    alpha: FractionalExponent,
) -> Result<f64> {
    Ok(alpha.value() * log_likelihood(m, data)?)
}

/// Gradient of `α · log L_n` with respect to `M`.
pub fn frac_log_likelihood_grad(
    m: &MatrixParam,
    data: &ObservationSet,
    alpha: FractionalExponent,
) -> Result<DMatrix<f64>> {
    check_indices(m, data)?;
    let mut g = DMatrix::zeros(m.d1(), m.d2());
    for o in &data.obs {
        let target = if o.is_positive() { 1.0 } else { 0.0 };
        g[(o.i, o.j)] += target - logistic(m.get(o.i, o.j));
    }
    g *= alpha.value();
    Ok(g)
}

/// Probability of label `y` at entry `(i, j)` (0-based).
pub fn likelihood_of_label(m: &MatrixParam, i: usize, j: usize, y: i8) -> Result<f64> {
    check_label(y)?;
    if i >= m.d1() || j >= m.d2() {
        return Err(contract(format!(
            "entry ({}, {}) outside the {}×{} matrix",
            i + 1,
            j + 1,
            m.d1(),
            m.d2()
        )));
    }
    let x = m.get(i, j);
    Ok(if y == 1 { logistic(x) } else { logistic(-x) })
}

pub(crate) fn read_numeric_rows<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|e| {
                    contract(format!("row {}: cannot parse `{s}` as a number: {e}", line + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub(crate) fn write_numeric_rows<W: Write>(writer: W, m: &DMatrix<f64>) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format_f64(m[(i, j)])).collect();
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(crate::error::io_err("flushing matrix CSV"))?;
    Ok(())
}

/// Shortest representation that round-trips exactly.
pub(crate) fn format_f64(x: f64) -> String {
    format!("{x:?}")
}
