//! L1-regularized least squares by cyclic coordinate descent, with the
//! penalty picked by K-fold cross-validated mean squared error.
//!
//! The objective on standardized covariates `z` and centered outcome `y` is
//!
//! ```text
//! (1 / 2n) ‖y − z b‖² + λ ‖b‖₁
//! ```
//!
//! and the returned model is mapped back to the original covariate scale.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RegressionLearner, Regressor, Standardizer};
use crate::error::{Error, Result};

/// Linear predictor `x ↦ intercept + coef · x` in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    coefficients: Array1<f64>,
    intercept: f64,
    lambda: f64,
}

impl LinearModel {
    pub fn new(coefficients: Array1<f64>, intercept: f64) -> Self {
        Self {
            coefficients,
            intercept,
            lambda: 0.0,
        }
    }

    pub fn coefficients(&self) -> ArrayView1<'_, f64> {
        self.coefficients.view()
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    /// Penalty the model was fit with.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl Regressor for LinearModel {
    fn predict(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.intercept + self.coefficients.dot(&x)
    }
}

/// Cross-validated lasso settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoCv {
    /// Explicit penalties; `None` uses `n_lambdas` log-spaced values from
    /// `λ_max` down to `λ_max · lambda_min_ratio`.
    pub lambda_grid: Option<Vec<f64>>,
    pub n_lambdas: usize,
    pub lambda_min_ratio: f64,
    pub folds: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_sweeps: usize,
    /// Refit each penalty's active set without penalty (relaxed lasso).
    pub relax: bool,
}

impl Default for LassoCv {
    fn default() -> Self {
        Self {
            lambda_grid: None,
            n_lambdas: 20,
            lambda_min_ratio: 1e-3,
            folds: 5,
            seed: 0,
            tol: 1e-7,
            max_sweeps: 1000,
            relax: false,
        }
    }
}

impl RegressionLearner for LassoCv {
    fn fit(&self, x: ArrayView2<'_, f64>, y: &[f64]) -> Result<Arc<dyn Regressor>> {
        Ok(Arc::new(self.fit_model(x, y)?))
    }
}

/// Standardized design stored column-wise, plus the centered outcome.
struct Design {
    std: Standardizer,
    /// `cols[j]` is column `j` of the standardized design.
    cols: Array2<f64>,
    /// `‖z_j‖² / n`; zero for constant columns.
    col_sq: Vec<f64>,
    y_mean: f64,
    y: Array1<f64>,
}

impl Design {
    fn new(x: ArrayView2<'_, f64>, y: &[f64]) -> Self {
        let n = x.nrows() as f64;
        let std = Standardizer::fit(x);
        let mut cols = (&x - &std.mean().view().insert_axis(Axis(0))) / std.scale().view().insert_axis(Axis(0));
        cols = cols.reversed_axes().as_standard_layout().to_owned();
        let col_sq = cols.axis_iter(Axis(0)).map(|c| c.dot(&c) / n).collect();
        let y_mean = y.iter().sum::<f64>() / n;
        let y = y.iter().map(|v| v - y_mean).collect();
        Self {
            std,
            cols,
            col_sq,
            y_mean,
            y,
        }
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn lambda_max(&self) -> f64 {
        let n = self.n() as f64;
        self.cols
            .axis_iter(Axis(0))
            .map(|c| (c.dot(&self.y) / n).abs())
            .fold(0.0, f64::max)
    }

    fn objective(&self, b: &Array1<f64>, resid: &Array1<f64>, lambda: f64) -> f64 {
        0.5 * resid.dot(resid) / self.n() as f64 + lambda * b.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Cyclic coordinate descent from `b`, updating it in place. Returns the
    /// objective after each full sweep.
    fn descend(&self, b: &mut Array1<f64>, lambda: f64, tol: f64, max_sweeps: usize) -> Vec<f64> {
        self.descend_on(b, lambda, tol, max_sweeps, None)
    }

    /// As [`Self::descend`], holding coordinates outside `active` at zero.
    fn descend_on(&self, b: &mut Array1<f64>, lambda: f64, tol: f64, max_sweeps: usize, active: Option<&[bool]>) -> Vec<f64> {
        let n = self.n() as f64;
        let mut resid = &self.y - &self.cols.t().dot(b);
        let mut trace = Vec::new();
        for _ in 0..max_sweeps {
            let mut max_step = 0.0_f64;
            for (j, col) in self.cols.axis_iter(Axis(0)).enumerate() {
                if self.col_sq[j] == 0.0 || active.is_some_and(|a| !a[j]) {
                    b[j] = 0.0;
                    continue;
                }
                let old = b[j];
                let rho = col.dot(&resid) / n + self.col_sq[j] * old;
                let new = soft_threshold(rho, lambda) / self.col_sq[j];
                if new != old {
                    resid.scaled_add(old - new, &col);
                    b[j] = new;
                    max_step = max_step.max((new - old).abs());
                }
            }
            trace.push(self.objective(b, &resid, lambda));
            if max_step < tol {
                break;
            }
        }
        trace
    }

    fn to_model(&self, b: &Array1<f64>, lambda: f64) -> LinearModel {
        let coefficients = b / self.std.scale();
        let intercept = self.y_mean - coefficients.dot(self.std.mean());
        LinearModel {
            coefficients,
            intercept,
            lambda,
        }
    }
}

fn soft_threshold(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

impl LassoCv {
    fn grid(&self, design: &Design) -> Vec<f64> {
        let mut grid = match &self.lambda_grid {
            Some(g) => g.clone(),
            None => {
                let hi = design.lambda_max();
                if hi <= 0.0 {
                    vec![0.0]
                } else {
                    let m = self.n_lambdas.max(1);
                    let lo = hi * self.lambda_min_ratio;
                    (0..m)
                        .map(|i| {
                            let frac = if m == 1 { 0.0 } else { i as f64 / (m - 1) as f64 };
                            (hi.ln() + frac * (lo.ln() - hi.ln())).exp()
                        })
                        .collect()
                }
            }
        };
        grid.sort_by(|a, b| b.total_cmp(a));
        grid
    }

    /// Coefficients along a decreasing penalty path with warm starts.
    fn path(&self, design: &Design, grid: &[f64]) -> Vec<Array1<f64>> {
        let mut b = Array1::zeros(design.cols.nrows());
        grid.iter()
            .map(|&lambda| {
                design.descend(&mut b, lambda, self.tol, self.max_sweeps);
                if self.relax {
                    let active: Vec<bool> = b.iter().map(|v| *v != 0.0).collect();
                    let mut r = b.clone();
                    design.descend_on(&mut r, 0.0, self.tol, self.max_sweeps, Some(&active));
                    r
                } else {
                    b.clone()
                }
            })
            .collect()
    }

    pub fn fit_model(&self, x: ArrayView2<'_, f64>, y: &[f64]) -> Result<LinearModel> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::invalid(format!("lasso needs at least 2 rows, got {n}")));
        }
        if y.len() != n {
            return Err(Error::invalid("covariate rows and outcomes differ in length"));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite entry in regression data"));
        }
        if let Some(g) = &self.lambda_grid {
            if g.is_empty() || g.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                return Err(Error::invalid("lambda grid must be a nonempty list of nonnegative reals"));
            }
        }
        let design = Design::new(x, y);
        let grid = self.grid(&design);
        let best = if grid.len() == 1 { 0 } else { self.select(x, y, &grid) };
        let path = self.path(&design, &grid[..=best]);
        Ok(design.to_model(path.last().expect("nonempty path"), grid[best]))
    }

    /// Index of the penalty with the smallest cross-validated squared error.
    fn select(&self, x: ArrayView2<'_, f64>, y: &[f64], grid: &[f64]) -> usize {
        let n = x.nrows();
        let k = self.folds.clamp(2, n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        let mut fold_of = vec![0usize; n];
        for (pos, &i) in order.iter().enumerate() {
            fold_of[i] = pos % k;
        }
        let mut sse = vec![0.0; grid.len()];
        for fold in 0..k {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
            if train.len() < 2 || test.is_empty() {
                continue;
            }
            let xt = x.select(Axis(0), &train);
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let design = Design::new(xt.view(), &yt);
            for (g, b) in self.path(&design, grid).iter().enumerate() {
                let model = design.to_model(b, grid[g]);
                sse[g] += test
                    .iter()
                    .map(|&i| (y[i] - model.predict(x.row(i))).powi(2))
                    .sum::<f64>();
            }
        }
        sse.iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// Lasso with `lambda` chosen from `lambda_grid` by 5-fold cross-validation.
pub fn fit_mean_regressor(x: ArrayView2<'_, f64>, y: &[f64], lambda_grid: Option<Vec<f64>>) -> Result<LinearModel> {
    LassoCv {
        lambda_grid,
        ..LassoCv::default()
    }
    .fit_model(x, y)
}

/// Objective after each coordinate-descent sweep at a fixed penalty.
pub fn objective_trace(x: ArrayView2<'_, f64>, y: &[f64], lambda: f64, max_sweeps: usize) -> Vec<f64> {
    let design = Design::new(x, y);
    let mut b = Array1::zeros(design.cols.nrows());
    design.descend(&mut b, lambda, 0.0, max_sweeps)
}
