//! Density and survival curves on an even grid, written as `y,value` CSV.

use std::path::Path;

use crate::error::{NphError, Result};
use crate::model::NphModel;

pub const GRID_POINTS: usize = 400;

/// `n` evenly spaced points from 0 to `upper` inclusive.
pub fn grid(upper: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|j| upper * j as f64 / (n - 1) as f64).collect(),
    }
}

/// Writes `header` then one `y,value...` row per point.
pub fn write_columns(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let to_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(source) => NphError::Io { path: path.to_path_buf(), source },
        other => NphError::InvalidInput(format!("{}: {other:?}", path.display())),
    };
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(to_err)?;
    }
    w.flush().map_err(|source| NphError::Io { path: path.to_path_buf(), source })
}

/// Writes `<stem>.density.csv` and `<stem>.survival.csv` on `[0, upper]`.
pub fn write_model_curves(model: &NphModel, upper: f64, stem: &Path) -> Result<()> {
    let ys = grid(upper, GRID_POINTS);
    let density: Vec<Vec<f64>> = ys.iter().map(|&y| vec![y, model.density(y)]).collect();
    let survival: Vec<Vec<f64>> = ys.iter().map(|&y| vec![y, model.survival(y)]).collect();
    write_columns(&with_suffix(stem, "density.csv"), &["y", "value"], &density)?;
    write_columns(&with_suffix(stem, "survival.csv"), &["y", "value"], &survival)
}

/// `<stem>.<suffix>`, keeping any dots already in the stem.
pub fn with_suffix(stem: &Path, suffix: &str) -> std::path::PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    s.into()
}
