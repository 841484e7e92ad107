//! Report files: one CSV row per run (locked schema) and a JSON summary.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bounds::{tally_concentration, BoundCheckResult, BoundSide};
use crate::error::{io_err, Result};
use crate::model::format_f64;

use super::run::{fit_loglog, median, ReplicatedResult, RunResult, SlopeEstimate, SweepPoint, SweepReport};

/// Column order of the report CSV.
pub const REPORT_COLUMNS: [&str; 18] = [
    "config_digest",
    "seed",
    "n",
    "d1",
    "d2",
    "r",
    "alpha",
    "prior",
    "epsilon_n",
    "frob_sq_mean_est",
    "post_avg_frob_sq",
    "post_avg_hellinger",
    "post_avg_renyi",
    "thr_renyi",
    "thr_hellinger",
    "thr_frobenius",
    "prob_floor",
    "accept_rate",
];

/// One parsed CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub config_digest: String,
    pub seed: u64,
    pub n: usize,
    pub d1: usize,
    pub d2: usize,
    pub r: usize,
    pub alpha: f64,
    pub prior: String,
    pub epsilon_n: f64,
    pub frob_sq_mean_est: f64,
    pub post_avg_frob_sq: f64,
    pub post_avg_hellinger: f64,
    pub post_avg_renyi: f64,
    pub thr_renyi: f64,
    pub thr_hellinger: f64,
    pub thr_frobenius: f64,
    pub prob_floor: f64,
    pub accept_rate: f64,
}

impl From<&RunResult> for ReportRow {
    fn from(r: &RunResult) -> Self {
        let thr = |k: &str| r.thresholds.get(k).copied().unwrap_or(f64::NAN);
        Self {
            config_digest: r.config_digest.clone(),
            seed: r.seed,
            n: r.n,
            d1: r.d1,
            d2: r.d2,
            r: r.r,
            alpha: r.alpha,
            prior: r.prior.clone(),
            epsilon_n: r.epsilon_n,
            frob_sq_mean_est: r.frob_sq_mean_est,
            post_avg_frob_sq: r.post_avg_frob_sq.estimate,
            post_avg_hellinger: r.post_avg_hellinger.estimate,
            post_avg_renyi: r.post_avg_renyi.estimate,
            thr_renyi: thr(BoundSide::RenyiTheorem.name()),
            thr_hellinger: thr(BoundSide::HellingerCorollary.name()),
            thr_frobenius: thr(BoundSide::FrobeniusTheorem.name()),
            prob_floor: r.prob_floor,
            accept_rate: r.accept_rate,
        }
    }
}

impl ReportRow {
    fn fields(&self) -> Vec<String> {
        vec![
            self.config_digest.clone(),
            self.seed.to_string(),
            self.n.to_string(),
            self.d1.to_string(),
            self.d2.to_string(),
            self.r.to_string(),
            format_f64(self.alpha),
            self.prior.clone(),
            format_f64(self.epsilon_n),
            format_f64(self.frob_sq_mean_est),
            format_f64(self.post_avg_frob_sq),
            format_f64(self.post_avg_hellinger),
            format_f64(self.post_avg_renyi),
            format_f64(self.thr_renyi),
            format_f64(self.thr_hellinger),
            format_f64(self.thr_frobenius),
            format_f64(self.prob_floor),
            format_f64(self.accept_rate),
        ]
    }
}

pub fn write_report_csv<W: Write>(rows: &[ReportRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPORT_COLUMNS)?;
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.flush().map_err(io_err("flushing report CSV"))?;
    Ok(())
}

pub fn read_report_csv<R: Read>(reader: R) -> Result<Vec<ReportRow>> {
    let mut rd = csv::Reader::from_reader(reader);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != REPORT_COLUMNS {
        return Err(crate::error::contract(format!(
            "report header {header:?} does not match the schema {REPORT_COLUMNS:?}"
        )));
    }
    rd.deserialize().map(|r| r.map_err(Into::into)).collect()
}

/// Runs of one configuration, aggregated from report rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowPoint {
    pub config_digest: String,
    pub n: usize,
    pub runs: usize,
    pub median_post_avg_frob_sq: f64,
    pub median_frob_sq_mean_est: f64,
    pub checks: Vec<BoundCheckResult>,
}

/// Rows sharing shape, rank, exponent and prior family, across `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowGroup {
    pub key: String,
    pub points: Vec<RowPoint>,
    pub slope_post_avg_frob_sq_vs_n: Option<SlopeEstimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowSummary {
    pub groups: Vec<RowGroup>,
}

fn prior_family(label: &str) -> &str {
    label.split('(').next().unwrap_or(label)
}

/// Recomputes medians, concentration tallies and `n`-slopes from report rows.
pub fn summarize_rows(rows: &[ReportRow]) -> Result<RowSummary> {
    let mut groups: BTreeMap<String, BTreeMap<(usize, String), Vec<&ReportRow>>> = BTreeMap::new();
    for row in rows {
        let key = format!(
            "d1={},d2={},r={},alpha={},prior={}",
            row.d1,
            row.d2,
            row.r,
            format_f64(row.alpha),
            prior_family(&row.prior)
        );
        groups
            .entry(key)
            .or_default()
            .entry((row.n, row.config_digest.clone()))
            .or_default()
            .push(row);
    }
    let mut out = Vec::new();
    for (key, by_point) in groups {
        let mut points = Vec::new();
        for ((n, digest), rs) in by_point {
            let first = rs[0];
            let mut checks = Vec::new();
            for (side, thr, pick) in [
                (BoundSide::RenyiTheorem, first.thr_renyi, (|r: &ReportRow| r.post_avg_renyi) as fn(&ReportRow) -> f64),
                (BoundSide::HellingerCorollary, first.thr_hellinger, |r: &ReportRow| r.post_avg_hellinger),
                (BoundSide::FrobeniusTheorem, first.thr_frobenius, |r: &ReportRow| r.post_avg_frob_sq),
            ] {
                let values: Vec<f64> = rs.iter().map(|r| pick(r)).collect();
                checks.push(tally_concentration(&values, side, n, first.epsilon_n, thr)?);
            }
            points.push(RowPoint {
                config_digest: digest,
                n,
                runs: rs.len(),
                median_post_avg_frob_sq: median(&rs.iter().map(|r| r.post_avg_frob_sq).collect::<Vec<_>>()),
                median_frob_sq_mean_est: median(&rs.iter().map(|r| r.frob_sq_mean_est).collect::<Vec<_>>()),
                checks,
            });
        }
        let xs: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.median_post_avg_frob_sq).collect();
        let mut distinct = xs.clone();
        distinct.dedup();
        let slope = if distinct.len() >= 2 { fit_loglog(&xs, &ys).ok() } else { None };
        out.push(RowGroup {
            key,
            points,
            slope_post_avg_frob_sq_vs_n: slope,
        });
    }
    Ok(RowSummary { groups: out })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))
}

fn write_csv_file(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let f = File::create(path).map_err(io_err(format!("creating {}", path.display())))?;
    write_report_csv(rows, BufWriter::new(f))
}

/// Pretty JSON with a trailing newline.
pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(io_err(format!("creating {}", path.display())))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(io_err(format!("writing {}", path.display())))?;
    w.flush().map_err(io_err(format!("writing {}", path.display())))?;
    Ok(())
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    slopes: &'a BTreeMap<String, SlopeEstimate>,
    monotone_inversions: usize,
    points: &'a [SweepPoint],
}

/// Writes `report.csv` and `summary.json` for a sweep.
pub fn emit_sweep(report: &SweepReport, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let rows: Vec<ReportRow> = report.rows.iter().map(ReportRow::from).collect();
    write_csv_file(&dir.join("report.csv"), &rows)?;
    write_json_file(
        &dir.join("summary.json"),
        &SweepSummary {
            slopes: &report.slopes,
            monotone_inversions: report.monotone_inversions,
            points: &report.points,
        },
    )
}

#[derive(Serialize)]
struct ReplicatedSummary<'a> {
    config_digest: &'a str,
    n: usize,
    r: usize,
    checks: &'a [BoundCheckResult],
    jensen_violations: usize,
    transfer_checked: usize,
    transfer_violations: usize,
    hellinger_renyi_violations: usize,
}

/// Writes `report.csv` and `summary.json` for replicated runs of one config.
pub fn emit_replicated(result: &ReplicatedResult, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let rows: Vec<ReportRow> = result.runs.iter().map(ReportRow::from).collect();
    write_csv_file(&dir.join("report.csv"), &rows)?;
    write_json_file(
        &dir.join("summary.json"),
        &ReplicatedSummary {
            config_digest: &result.config_digest,
            n: result.n,
            r: result.r,
            checks: &result.checks,
            jensen_violations: result.runs.iter().filter(|r| !r.jensen_ok).count(),
            transfer_checked: result.runs.iter().map(|r| r.transfer_checked).sum(),
            transfer_violations: result.runs.iter().map(|r| r.transfer_violations).sum(),
            hellinger_renyi_violations: result.runs.iter().map(|r| r.hellinger_renyi_violations).sum(),
        },
    )
}
