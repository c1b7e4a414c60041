//! Learners used inside the conformal pipelines.
//!
//! Each pipeline needs up to four fitted functions: a mean regressor `μ̂`,
//! a density ratio `ŵ ∝ dQ_X/dP_X`, a conditional CDF of the score `m̂(x; t)`,
//! and (for causal targets) a propensity score `ê(x)`. They are consumed
//! through the object-safe traits below so any model honoring the stated
//! invariants can be plugged in. Built-ins: cross-validated lasso,
//! logistic-regression odds, and a k-nearest-neighbor CDF.

use std::sync::Arc;

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub mod knn;
pub mod lasso;
pub mod logistic;

pub use knn::{fit_conditional_cdf, KnnCdf, KnnCdfModel};
pub use lasso::{fit_mean_regressor, LassoCv, LinearModel};
pub use logistic::{fit_density_ratio, fit_propensity, DensityRatioModel, LogisticPropensity, LogisticRatio, PropensityFit};

/// Fitted conditional-mean function `μ̂`.
pub trait Regressor: Send + Sync {
    fn predict(&self, x: ArrayView1<'_, f64>) -> f64;
}

pub trait RegressionLearner: Send + Sync {
    fn fit(&self, x: ArrayView2<'_, f64>, y: &[f64]) -> Result<Arc<dyn Regressor>>;
}

/// Fitted likelihood ratio `ŵ(x)`, known up to a positive constant.
pub trait DensityRatio: Send + Sync {
    fn ratio(&self, x: ArrayView1<'_, f64>) -> f64;
}

pub trait RatioLearner: Send + Sync {
    /// Learns `dQ/dP` from covariates drawn under `P` (source) and `Q` (target).
    fn fit(&self, source: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<Arc<dyn DensityRatio>>;
}

/// Fitted conditional CDF `m̂(x; t) ≈ P(S ≤ t | X = x)`: values in `[0, 1]`,
/// nondecreasing and right-continuous in `t`.
pub trait ConditionalCdf: Send + Sync {
    fn cdf(&self, x: ArrayView1<'_, f64>, t: f64) -> f64;

    /// `m̂(x; t)` for every `t` of a nondecreasing grid.
    fn cdf_on_grid(&self, x: ArrayView1<'_, f64>, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&t| self.cdf(x, t)).collect()
    }
}

pub trait CdfLearner: Send + Sync {
    fn fit(&self, x: ArrayView2<'_, f64>, scores: &[f64]) -> Result<Arc<dyn ConditionalCdf>>;
}

/// Fitted propensity `ê(x) = P̂(T = 1 | X = x)`, strictly inside `(0, 1)`.
pub trait PropensityModel: Send + Sync {
    fn propensity(&self, x: ArrayView1<'_, f64>) -> f64;
}

pub trait PropensityLearner: Send + Sync {
    fn fit(&self, x: ArrayView2<'_, f64>, treatment: &[u8]) -> Result<Arc<dyn PropensityModel>>;
}

/// A density ratio given in closed form.
pub struct FnRatio<F>(pub F);

impl<F> DensityRatio for FnRatio<F>
where
    F: Fn(ArrayView1<'_, f64>) -> f64 + Send + Sync,
{
    fn ratio(&self, x: ArrayView1<'_, f64>) -> f64 {
        (self.0)(x)
    }
}

/// `w ≡ 1`.
pub struct UnitRatio;

impl DensityRatio for UnitRatio {
    fn ratio(&self, _x: ArrayView1<'_, f64>) -> f64 {
        1.0
    }
}

/// A propensity score given in closed form.
pub struct FnPropensity<F>(pub F);

impl<F> PropensityModel for FnPropensity<F>
where
    F: Fn(ArrayView1<'_, f64>) -> f64 + Send + Sync,
{
    fn propensity(&self, x: ArrayView1<'_, f64>) -> f64 {
        (self.0)(x)
    }
}

/// The learners a pipeline draws on.
#[derive(Clone)]
pub struct Learners {
    pub regression: Arc<dyn RegressionLearner>,
    pub ratio: Arc<dyn RatioLearner>,
    pub cdf: Arc<dyn CdfLearner>,
    pub propensity: Arc<dyn PropensityLearner>,
}

impl Default for Learners {
    fn default() -> Self {
        Self {
            regression: Arc::new(LassoCv::default()),
            ratio: Arc::new(LogisticRatio::default()),
            cdf: Arc::new(KnnCdf::default()),
            propensity: Arc::new(LogisticPropensity::default()),
        }
    }
}

/// Nonconformity score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFunction {
    /// `s(x, y) = |y - μ̂(x)|`
    #[default]
    AbsResidual,
}

impl ScoreFunction {
    pub fn apply(&self, model: &dyn Regressor, x: ArrayView1<'_, f64>, y: f64) -> f64 {
        match self {
            ScoreFunction::AbsResidual => (y - model.predict(x)).abs(),
        }
    }
}

/// Per-column centering and scaling learned from a fitting sample.
/// Constant columns keep unit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Array1<f64>,
    scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let mut scale = Array1::zeros(x.ncols());
        for (j, col) in x.axis_iter(Axis(1)).enumerate() {
            let var = col.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n;
            scale[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
        }
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn scale(&self) -> &Array1<f64> {
        &self.scale
    }

    pub fn transform_row(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        (&x - &self.mean) / &self.scale
    }

    /// Row `x` written into `out` in standardized coordinates.
    pub fn transform_into(&self, x: ArrayView1<'_, f64>, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = (x[j] - self.mean[j]) / self.scale[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn abs_residual_examples() {
        let one = LinearModel::new(array![0.0], 1.0);
        let x = array![5.0];
        assert_eq!(ScoreFunction::AbsResidual.apply(&one, x.view(), 3.0), 2.0);
        assert_eq!(ScoreFunction::AbsResidual.apply(&one, x.view(), 1.0), 0.0);
        let twice = LinearModel::new(array![2.0], 0.0);
        assert_eq!(ScoreFunction::AbsResidual.apply(&twice, array![1.0].view(), 0.0), 2.0);
    }

    #[test]
    fn abs_residual_is_symmetric() {
        let m = LinearModel::new(array![0.3, -1.2], 0.4);
        let x = array![0.7, 2.0];
        let c = m.predict(x.view());
        for r in [0.0, 0.1, 1.5, 33.0] {
            let a = ScoreFunction::AbsResidual.apply(&m, x.view(), c + r);
            let b = ScoreFunction::AbsResidual.apply(&m, x.view(), c - r);
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let x = array![[1.0, 5.0], [3.0, 5.0]];
        let s = Standardizer::fit(x.view());
        assert_eq!(s.scale()[1], 1.0);
        let z = s.transform_row(x.row(0));
        assert_eq!(z[0], -1.0);
        assert_eq!(z[1], 0.0);
    }
}
