//! CSV and JSON interchange: interval panels, dense matrices, fit reports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::interval::{IntervalError, IntervalMatrix};
use crate::solver::{EigenBounds, IglFit, KktReport};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad numeric value at row {0}, column {1}")]
    BadValue(usize, usize),
    #[error("inconsistent row length at row {0}")]
    RaggedRow(usize),
    #[error("paired-column file needs <name>_l/<name>_u pairs; column {0:?} has no partner")]
    UnpairedColumn(String),
    #[error(transparent)]
    Interval(#[from] IntervalError),
}

/// Read a headered CSV into (labels, matrix).
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>), IoError> {
    let mut reader = csv::Reader::from_path(path)?;
    let labels: Vec<String> =
        reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let p = labels.len();
    let mut data: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != p {
            return Err(IoError::RaggedRow(i + 2));
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| IoError::BadValue(i + 2, j))?;
            data.push(v);
        }
        rows += 1;
    }
    Ok((labels, DMatrix::from_row_slice(rows, p, &data)))
}

/// Write a matrix as headered CSV.
pub fn write_matrix_csv(
    path: &Path,
    labels: &[String],
    m: &DMatrix<f64>,
) -> Result<(), IoError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(labels)?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.17e}", m[(i, j)])).collect();
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Load an interval panel from two CSVs holding lower and upper bounds.
pub fn read_interval_pair(
    lower_path: &Path,
    upper_path: &Path,
) -> Result<IntervalMatrix, IoError> {
    let (labels, lower) = read_matrix_csv(lower_path)?;
    let (_, upper) = read_matrix_csv(upper_path)?;
    Ok(IntervalMatrix::new(lower, upper)?.with_labels(labels))
}

/// Load an interval panel from a single CSV with `<name>_l` / `<name>_u` column pairs.
pub fn read_interval_paired_columns(path: &Path) -> Result<IntervalMatrix, IoError> {
    let (labels, data) = read_matrix_csv(path)?;
    let mut names: Vec<String> = Vec::new();
    let mut lower_cols: Vec<usize> = Vec::new();
    let mut upper_cols: Vec<usize> = Vec::new();
    for (j, label) in labels.iter().enumerate() {
        if let Some(name) = label.strip_suffix("_l") {
            let partner = format!("{name}_u");
            let uj = labels
                .iter()
                .position(|l| l == &partner)
                .ok_or_else(|| IoError::UnpairedColumn(label.clone()))?;
            names.push(name.to_string());
            lower_cols.push(j);
            upper_cols.push(uj);
        } else if !label.ends_with("_u") {
            return Err(IoError::UnpairedColumn(label.clone()));
        }
    }
    if names.is_empty() {
        return Err(IoError::UnpairedColumn("<none>".into()));
    }
    let n = data.nrows();
    let p = names.len();
    let mut lower = DMatrix::zeros(n, p);
    let mut upper = DMatrix::zeros(n, p);
    for k in 0..p {
        for i in 0..n {
            lower[(i, k)] = data[(i, lower_cols[k])];
            upper[(i, k)] = data[(i, upper_cols[k])];
        }
    }
    Ok(IntervalMatrix::new(lower, upper)?.with_labels(names))
}

/// JSON-serializable view of a fit, with dense row-major matrices.
#[derive(Debug, Serialize)]
pub struct FitJson {
    pub lambda: f64,
    pub gap: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub objective: f64,
    pub p: usize,
    pub theta: Vec<f64>,
    pub sigma: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kkt: Option<KktJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigen_bounds: Option<EigenBoundsJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bic_path: Option<Vec<BicPathEntryJson>>,
}

#[derive(Debug, Serialize)]
pub struct KktJson {
    pub max_stationarity_residual: f64,
    pub max_feasibility_excess: f64,
    pub min_eigenvalue_theta: f64,
    pub max_eigenvalue_theta: f64,
}

impl From<&KktReport> for KktJson {
    fn from(r: &KktReport) -> Self {
        Self {
            max_stationarity_residual: r.max_stationarity_residual,
            max_feasibility_excess: r.max_feasibility_excess,
            min_eigenvalue_theta: r.min_eigenvalue_theta,
            max_eigenvalue_theta: r.max_eigenvalue_theta,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct EigenBoundsJson {
    pub lower: f64,
    pub upper: f64,
    pub observed: f64,
    pub pass: bool,
}

impl From<&EigenBounds> for EigenBoundsJson {
    fn from(b: &EigenBounds) -> Self {
        Self { lower: b.lower, upper: b.upper, observed: b.observed, pass: b.pass }
    }
}

#[derive(Debug, Serialize)]
pub struct BicPathEntryJson {
    pub lambda: f64,
    pub bic: Option<f64>,
    pub k: Option<usize>,
    pub gap: Option<f64>,
    pub sweeps: Option<usize>,
    pub selected: bool,
}

pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

impl FitJson {
    pub fn from_fit(fit: &IglFit) -> Self {
        Self {
            lambda: fit.lambda,
            gap: fit.gap,
            sweeps: fit.sweeps,
            converged: fit.converged,
            objective: fit.objective,
            p: fit.theta_hat.nrows(),
            theta: row_major(&fit.theta_hat),
            sigma: row_major(&fit.sigma_hat),
            kkt: None,
            eigen_bounds: None,
            selected_lambda: None,
            bic_path: None,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}
