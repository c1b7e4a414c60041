//! Labeled covariate tables shared by the pipelines.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Covariate rows with a real outcome per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Vec<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::invalid(format!(
                "covariate rows ({}) and outcomes ({}) differ in length",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite entry in dataset"));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(i)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    pub fn into_parts(self) -> (Array2<f64>, Vec<f64>) {
        (self.x, self.y)
    }
}

/// Observational rows `(X, T, Y)` with binary treatment.
///
/// `y` is the realized outcome `Y(t)`; consistency between the two is the
/// caller's responsibility.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationalData {
    x: Array2<f64>,
    t: Vec<u8>,
    y: Vec<f64>,
}

impl ObservationalData {
    pub fn new(x: Array2<f64>, t: Vec<u8>, y: Vec<f64>) -> Result<Self> {
        if x.nrows() != y.len() || t.len() != y.len() {
            return Err(Error::invalid("covariates, treatments and outcomes differ in length"));
        }
        if let Some(bad) = t.iter().find(|&&v| v > 1) {
            return Err(Error::invalid(format!("treatment must be 0 or 1, got {bad}")));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite entry in observational data"));
        }
        Ok(Self { x, t, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn t(&self) -> &[u8] {
        &self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn subset(&self, idx: &[usize]) -> ObservationalData {
        ObservationalData {
            x: self.x.select(Axis(0), idx),
            t: idx.iter().map(|&i| self.t[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}
