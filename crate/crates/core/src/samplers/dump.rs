//! Chain dump: flattened states as CSV plus a JSON diagnostics sidecar.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{io_err, Result};
use crate::model::format_f64;

use super::chain::{Chain, ChainDiagnostics, ChainStates, TargetDescriptor};

/// One row per stored state. Matrix chains write `m_i_j` columns (row-major);
/// factor chains write `l_i_k`, `r_j_k` and `gamma_k`.
pub fn write_chain_csv<W: Write>(chain: &Chain, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["index".to_string(), "burn_in".to_string()];
    match &chain.states {
        ChainStates::Matrix(v) => {
            let (d1, d2) = v[0].shape();
            for i in 0..d1 {
                for j in 0..d2 {
                    header.push(format!("m_{}_{}", i + 1, j + 1));
                }
            }
        }
        ChainStates::Factor(v) => {
            let s = &v[0];
            for (name, rows) in [("l", s.d1()), ("r", s.d2())] {
                for i in 0..rows {
                    for k in 0..s.k() {
                        header.push(format!("{name}_{}_{}", i + 1, k + 1));
                    }
                }
            }
            for k in 0..s.k() {
                header.push(format!("gamma_{}", k + 1));
            }
        }
    }
    w.write_record(&header)?;
    for idx in 0..chain.states.len() {
        let mut row = vec![idx.to_string(), ((idx < chain.first_kept) as u8).to_string()];
        match &chain.states {
            ChainStates::Matrix(v) => row.extend(v[idx].to_row_major().into_iter().map(format_f64)),
            ChainStates::Factor(v) => {
                let s = &v[idx];
                for m in [&s.l, &s.r] {
                    for i in 0..m.nrows() {
                        for k in 0..m.ncols() {
                            row.push(format_f64(m[(i, k)]));
                        }
                    }
                }
                row.extend(s.gamma.iter().map(|g| format_f64(*g)));
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err("flushing chain CSV"))?;
    Ok(())
}

#[derive(Serialize)]
struct Sidecar<'a> {
    target: &'a TargetDescriptor,
    diagnostics: &'a ChainDiagnostics,
}

pub fn write_diagnostics_json<W: Write>(chain: &Chain, writer: W) -> Result<()> {
    let sidecar = Sidecar {
        target: &chain.target,
        diagnostics: &chain.diagnostics,
    };
    serde_json::to_writer_pretty(writer, &sidecar)?;
    Ok(())
}

/// Writes `<stem>.csv` and `<stem>.json` in `dir`.
pub fn dump_chain(chain: &Chain, dir: &Path, stem: &str) -> Result<()> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    let f = File::create(&csv_path).map_err(io_err(format!("creating {}", csv_path.display())))?;
    write_chain_csv(chain, BufWriter::new(f))?;
    let f = File::create(&json_path).map_err(io_err(format!("creating {}", json_path.display())))?;
    let mut w = BufWriter::new(f);
    write_diagnostics_json(chain, &mut w)?;
    w.write_all(b"\n").map_err(io_err(format!("writing {}", json_path.display())))?;
    Ok(())
}
