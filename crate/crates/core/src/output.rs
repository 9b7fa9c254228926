//! CSV views of a [`RunRecord`].

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsRow;
use crate::error::{Error, Result};
use crate::run::{RunRecord, Snapshot};

/// The tables a run can be exported as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsvKind {
    Density,
    Distribution,
    Diagnostics,
    Cells,
    Timing,
}

impl std::str::FromStr for CsvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "density" => Ok(CsvKind::Density),
            "distribution" => Ok(CsvKind::Distribution),
            "diagnostics" => Ok(CsvKind::Diagnostics),
            "cells" => Ok(CsvKind::Cells),
            "timing" => Ok(CsvKind::Timing),
            other => Err(Error::InvalidInput(format!("unknown table {other:?}"))),
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

/// `x, rho` for one snapshot.
pub fn density_csv(record: &RunRecord, snap: &Snapshot) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "rho"]).map_err(csv_err)?;
    for (x, r) in record.x_centers.iter().zip(&snap.rho) {
        w.serialize((x, r)).map_err(csv_err)?;
    }
    finish(w)
}

/// `x, v, f` for one snapshot.
pub fn distribution_csv(record: &RunRecord, snap: &Snapshot) -> Result<String> {
    let nv = record.v_centers.len();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "v", "f"]).map_err(csv_err)?;
    for (i, x) in record.x_centers.iter().enumerate() {
        for (j, v) in record.v_centers.iter().enumerate() {
            w.serialize((x, v, snap.f[i * nv + j])).map_err(csv_err)?;
        }
    }
    finish(w)
}

pub fn diagnostics_csv(rows: &[DiagnosticsRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(DiagnosticsRow::HEADER).map_err(csv_err)?;
    for r in rows {
        w.serialize((
            r.step,
            r.t,
            r.mass,
            r.delta_m,
            r.norm_f_minus_f,
            r.norm_g,
            r.norm_rho_minus_rho_f,
            r.n_kinetic_cells,
        ))
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn cells_csv(record: &RunRecord) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "t", "labels"]).map_err(csv_err)?;
    for r in &record.cell_trace {
        w.serialize((r.step, r.t, &r.labels)).map_err(csv_err)?;
    }
    finish(w)
}

pub fn timing_csv(records: &[&RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["solver", "case", "epsilon", "seconds"])
        .map_err(csv_err)?;
    for r in records {
        w.serialize((
            r.config.solver.name(),
            r.config.case.index(),
            r.config.epsilon.to_string(),
            r.timing.stepping_seconds,
        ))
        .map_err(csv_err)?;
    }
    finish(w)
}

/// Table text for `kind`. Snapshot tables concatenate all snapshots with a
/// leading `t` column.
pub fn table(record: &RunRecord, kind: CsvKind) -> Result<String> {
    match kind {
        CsvKind::Diagnostics => diagnostics_csv(&record.diagnostics),
        CsvKind::Cells => cells_csv(record),
        CsvKind::Timing => timing_csv(&[record]),
        CsvKind::Density | CsvKind::Distribution => {
            let mut out = String::new();
            for (k, snap) in record.snapshots.iter().enumerate() {
                let body = if kind == CsvKind::Density {
                    density_csv(record, snap)?
                } else {
                    distribution_csv(record, snap)?
                };
                for (n, line) in body.lines().enumerate() {
                    if n == 0 {
                        if k == 0 {
                            out.push_str("t,");
                            out.push_str(line);
                            out.push('\n');
                        }
                        continue;
                    }
                    out.push_str(&format!("{},{line}\n", snap.t));
                }
            }
            if out.is_empty() {
                out = if kind == CsvKind::Density {
                    "t,x,rho\n".into()
                } else {
                    "t,x,v,f\n".into()
                };
            }
            Ok(out)
        }
    }
}

/// Writes every table and the config echo into `dir`. Returns the paths.
pub fn write_all(record: &RunRecord, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };
    put("config.txt".into(), record.config.to_kv())?;
    for snap in &record.snapshots {
        put(
            format!("density_t{:.4}.csv", snap.t),
            density_csv(record, snap)?,
        )?;
        put(
            format!("distribution_t{:.4}.csv", snap.t),
            distribution_csv(record, snap)?,
        )?;
    }
    put(
        "diagnostics.csv".into(),
        diagnostics_csv(&record.diagnostics)?,
    )?;
    if !record.cell_trace.is_empty() {
        put("cells.csv".into(), cells_csv(record)?)?;
    }
    put("timing.csv".into(), timing_csv(&[record])?)?;
    Ok(written)
}
