//! File formats: trajectory and motion CSVs, TOML/JSON configs.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::CliError;
use crate::types::{RigidMotion, TrajectoryMatrix};

/// Parses a TOML or JSON config (chosen by extension). Parse errors carry the
/// line and column of the offending input.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}

/// Reads a trajectory CSV: a header of feature ids, then one row per
/// coordinate (`3(i-1) + axis` for frame `i`). `NaN` or empty cells are missing.
pub fn read_trajectory(path: &Path) -> Result<TrajectoryMatrix, CliError> {
    let bad = |msg: String| CliError::Input(format!("{}: {msg}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let cols = reader.headers().map_err(|e| bad(e.to_string()))?.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let line = r + 2;
        if record.len() != cols {
            return Err(bad(format!(
                "line {line}: {} fields, header has {cols}",
                record.len()
            )));
        }
        for (c, field) in record.iter().enumerate() {
            let v = if field.is_empty() {
                f64::NAN
            } else {
                field.parse::<f64>().map_err(|_| {
                    bad(format!(
                        "line {line}, column {}: not a number: {field:?}",
                        c + 1
                    ))
                })?
            };
            if v.is_infinite() {
                return Err(bad(format!(
                    "line {line}, column {}: infinite value",
                    c + 1
                )));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 || cols == 0 {
        return Err(bad("no data".into()));
    }
    TrajectoryMatrix::from_nan_marked(DMatrix::from_row_slice(rows, cols, &values))
        .map_err(|e| bad(e.to_string()))
}

/// Writes `x` with a `f1..fm` header and `NaN` at missing cells.
pub fn write_trajectory(path: &Path, x: &TrajectoryMatrix) -> Result<(), CliError> {
    let data = x.to_nan_marked();
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let fail = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    w.write_record((1..=data.ncols()).map(|j| format!("f{j}")))
        .map_err(fail)?;
    for r in 0..data.nrows() {
        w.write_record(data.row(r).iter().map(|v| v.to_string()))
            .map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub const MOTION_HEADER: [&str; 12] = [
    "r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32", "r33", "tx", "ty", "tz",
];

/// One row per frame in frame order: `R` row-major, then `T`.
pub fn write_motions(path: &Path, motions: &[RigidMotion]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let fail = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    w.write_record(MOTION_HEADER).map_err(fail)?;
    for g in motions {
        w.write_record(g.to_row_major().iter().map(|v| v.to_string()))
            .map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_motions(path: &Path) -> Result<Vec<RigidMotion>, CliError> {
    let bad = |msg: String| CliError::Input(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let nums: Vec<f64> = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| bad(format!("not a number: {f:?}")))
            })
            .collect::<Result<_, _>>()?;
        let v: [f64; 12] = nums
            .try_into()
            .map_err(|n: Vec<f64>| bad(format!("expected 12 fields, found {}", n.len())))?;
        out.push(RigidMotion::from_row_major(&v).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
