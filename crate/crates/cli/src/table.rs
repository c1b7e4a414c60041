//! CSV tables.
//!
//! Data files carry a mandatory header with covariates `x0..x{d-1}`, an
//! optional outcome `y` and an optional treatment `t` (0 or 1). Floats use
//! the shortest representation that parses back to the same value, and
//! `inf` / `-inf` for infinite bounds.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use robust_conformal::bench::{CellSummary, RunRecord};
use robust_conformal::{Dataset, Method, ObservationalData, PredictionInterval};

use crate::error::{CliError, CliResult};

/// Covariates with optional outcome and treatment columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub x: Array2<f64>,
    pub y: Option<Vec<f64>>,
    pub t: Option<Vec<u8>>,
}

impl Table {
    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labeled(&self, what: &str) -> CliResult<Dataset> {
        let y = self.y.clone().ok_or_else(|| CliError::data(format!("{what}: missing outcome column `y`")))?;
        Ok(Dataset::new(self.x.clone(), y)?)
    }

    pub fn observational(&self, what: &str) -> CliResult<ObservationalData> {
        let y = self.y.clone().ok_or_else(|| CliError::data(format!("{what}: missing outcome column `y`")))?;
        let t = self.t.clone().ok_or_else(|| CliError::data(format!("{what}: missing treatment column `t`")))?;
        Ok(ObservationalData::new(self.x.clone(), t, y)?)
    }
}

pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_f64(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| !v.is_nan())
}

enum Column {
    X(usize),
    Y,
    T,
}

fn columns(header: &csv::StringRecord) -> CliResult<Vec<Column>> {
    let mut cols = Vec::with_capacity(header.len());
    let mut seen = HashMap::new();
    for (i, name) in header.iter().enumerate() {
        let name = name.trim();
        let col = match name {
            "y" => Column::Y,
            "t" => Column::T,
            _ => match name.strip_prefix('x').and_then(|j| j.parse::<usize>().ok()) {
                Some(j) if format!("x{j}") == name => Column::X(j),
                _ => return Err(CliError::data(format!("line 1: unknown column `{name}`"))),
            },
        };
        if seen.insert(name.to_string(), i).is_some() {
            return Err(CliError::data(format!("line 1: duplicate column `{name}`")));
        }
        cols.push(col);
    }
    let d = cols.iter().filter(|c| matches!(c, Column::X(_))).count();
    if d == 0 {
        return Err(CliError::data("line 1: no covariate columns (expected x0, x1, ...)"));
    }
    for j in 0..d {
        if !seen.contains_key(&format!("x{j}")) {
            return Err(CliError::data(format!("line 1: covariate columns must be x0..x{}, missing `x{j}`", d - 1)));
        }
    }
    Ok(cols)
}

fn csv_error(e: csv::Error) -> CliError {
    match e.position() {
        Some(p) => CliError::data(format!("line {}: {e}", p.line())),
        None => CliError::data(e.to_string()),
    }
}

pub fn read_table_from<R: Read>(reader: R) -> CliResult<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let cols = columns(&header)?;
    let d = cols.iter().filter(|c| matches!(c, Column::X(_))).count();
    let has_y = cols.iter().any(|c| matches!(c, Column::Y));
    let has_t = cols.iter().any(|c| matches!(c, Column::T));
    let (mut xs, mut ys, mut ts) = (Vec::new(), Vec::new(), Vec::new());
    let mut row = vec![0.0; d];
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        for (c, field) in cols.iter().zip(rec.iter()) {
            let bad = |what: &str| CliError::data(format!("line {line}: {what} `{}`", field.trim()));
            match c {
                Column::X(j) => row[*j] = parse_f64(field).ok_or_else(|| bad(&format!("x{j}: not a number:")))?,
                Column::Y => ys.push(parse_f64(field).filter(|v| v.is_finite()).ok_or_else(|| bad("y: not a finite number:"))?),
                Column::T => ts.push(match field.trim() {
                    "0" => 0,
                    "1" => 1,
                    _ => return Err(bad("t: expected 0 or 1, got")),
                }),
            }
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(CliError::data(format!("line {line}: x{j} must be finite")));
        }
        xs.extend_from_slice(&row);
    }
    let n = xs.len() / d;
    let x = Array2::from_shape_vec((n, d), xs).map_err(|e| CliError::data(e.to_string()))?;
    Ok(Table {
        x,
        y: has_y.then_some(ys),
        t: has_t.then_some(ts),
    })
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let f = std::fs::File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    read_table_from(f).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_table_to<W: Write>(writer: W, table: &Table) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..table.dim()).map(|j| format!("x{j}")).collect();
    if table.y.is_some() {
        header.push("y".into());
    }
    if table.t.is_some() {
        header.push("t".into());
    }
    w.write_record(&header).map_err(csv_error)?;
    for (i, r) in table.x.rows().into_iter().enumerate() {
        let mut rec: Vec<String> = r.iter().map(|&v| format_f64(v)).collect();
        if let Some(y) = &table.y {
            rec.push(format_f64(y[i]));
        }
        if let Some(t) = &table.t {
            rec.push(t[i].to_string());
        }
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush().map_err(|e| CliError::data(e.to_string()))
}

/// One row of `intervals.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub index: usize,
    pub method: Method,
    pub divergence: String,
    pub rho: f64,
    pub fold: usize,
    pub lower: f64,
    pub upper: f64,
    pub threshold: f64,
    pub is_infinite: bool,
}

impl IntervalRow {
    pub fn new(index: usize, method: Method, divergence: &str, rho: f64, iv: &PredictionInterval) -> Self {
        Self {
            index,
            method,
            divergence: divergence.to_string(),
            rho,
            fold: iv.fold,
            lower: iv.lower,
            upper: iv.upper,
            threshold: iv.threshold,
            is_infinite: iv.is_infinite(),
        }
    }
}

/// Which counterfactual quantity a sensitivity row bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimand {
    Y1,
    Y0,
    Ite,
}

/// One row of the sensitivity `intervals.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub index: usize,
    pub estimand: Estimand,
    pub method: Method,
    pub divergence: String,
    pub rho: f64,
    pub lower: f64,
    pub upper: f64,
    pub threshold: f64,
    pub is_infinite: bool,
}

pub fn write_records_to<W: Write, T: Serialize>(writer: W, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush().map_err(|e| CliError::data(e.to_string()))
}

pub fn read_records_from<R: Read, T: DeserializeOwned>(reader: R) -> CliResult<Vec<T>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(csv_error))
        .collect()
}

pub fn read_records<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let f = std::fs::File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    read_records_from(f)
}

/// `report.csv`: one row per summarized cell.
pub type ReportRow = CellSummary;

/// `runs.csv`: one row per cell and run.
pub type RunRow = RunRecord;
