//! Debiased WRCP (D-WRCP).
//!
//! The coverage probability of a threshold `t` on the target is estimated by
//! the augmented form
//!
//! ```text
//! p̂(t) = Σ_i ŵ(X_i) (1{S_i ≤ t} − m̂(X_i; t)) / Σ_i ŵ(X_i)  +  mean_{j ≠ ℓ} m̂(X_j; t)
//! ```
//!
//! which stays consistent when either `ŵ` or `m̂` is. The curve is not
//! monotone in `t`, so the threshold is read off its suffix infimum. Both
//! training folds take turns as the calibration fold.

use std::sync::Arc;

use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;

use crate::conformal::{MethodConfig, PipelineOptions, PredictionInterval, SplitPlan, WeightSource};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{ConditionalCdf, DensityRatio, UnitRatio};

/// `p̂` on a candidate grid together with its suffix infimum.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageCurve {
    thresholds: Vec<f64>,
    values: Vec<f64>,
    suffix_inf: Vec<f64>,
}

impl CoverageCurve {
    pub fn new(thresholds: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() || thresholds.len() != values.len() {
            return Err(Error::invalid("coverage curve needs matching nonempty thresholds and values"));
        }
        if thresholds.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return Err(Error::invalid("candidate thresholds must be strictly increasing"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("coverage curve has a non-finite value".into()));
        }
        let suffix_inf = suffix_infimum(&values);
        Ok(Self {
            thresholds,
            values,
            suffix_inf,
        })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn suffix_inf(&self) -> &[f64] {
        &self.suffix_inf
    }
}

/// `p̃_j = min_{j' ≥ j} p_{j'}`.
pub fn suffix_infimum(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    for j in (0..out.len().saturating_sub(1)).rev() {
        out[j] = out[j].min(out[j + 1]);
    }
    out
}

/// `p̂(t)` from calibration scores, their weights, `m̂(X_i; t)` at the
/// calibration points, and the leave-one-out test average of `m̂(·; t)`.
pub fn phat(t: f64, cal_scores: &[f64], cal_weights: &[f64], cal_cdf: &[f64], test_cdf_avg: f64) -> Result<f64> {
    let n = cal_scores.len();
    if n == 0 {
        return Err(Error::EmptyFold("no calibration points".into()));
    }
    if cal_weights.len() != n || cal_cdf.len() != n {
        return Err(Error::invalid("calibration scores, weights and CDF values differ in length"));
    }
    let total: f64 = cal_weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    let mut acc = 0.0;
    for i in 0..n {
        let ind = if cal_scores[i] <= t { 1.0 } else { 0.0 };
        acc += cal_weights[i] * (ind - cal_cdf[i]);
    }
    Ok(acc / total + test_cdf_avg)
}

/// Smallest candidate whose suffix infimum reaches `level`, else `+∞`.
pub fn monotonized_threshold(curve: &CoverageCurve, level: f64) -> f64 {
    threshold_from_suffix(&curve.thresholds, &curve.suffix_inf, level)
}

fn threshold_from_suffix(thresholds: &[f64], suffix_inf: &[f64], level: f64) -> f64 {
    let j = suffix_inf.partition_point(|&p| p < level);
    thresholds.get(j).copied().unwrap_or(f64::INFINITY)
}

struct FoldState {
    test_idx: Vec<usize>,
    grid: Vec<f64>,
    /// Suffix-infimum curve for every test point of the fold.
    curves: Vec<Vec<f64>>,
    centers: Vec<f64>,
}

/// Cross-fitted curves for every test point; thresholds for any level are
/// read off without refitting.
pub struct DwrcpFit {
    plan: SplitPlan,
    folds: [FoldState; 2],
    n_test: usize,
}

impl DwrcpFit {
    pub fn fit(train: &Dataset, test_x: ArrayView2<'_, f64>, weights: &WeightSource, opts: &PipelineOptions, plan: SplitPlan) -> Result<Self> {
        if plan.tr0.is_empty() || plan.tr1.is_empty() {
            return Err(Error::EmptyFold("training data must provide two nonempty folds".into()));
        }
        if plan.test0.len() < 2 || plan.test1.len() < 2 {
            return Err(Error::EmptyFold("each test fold needs at least two points".into()));
        }
        if test_x.ncols() != train.dim() {
            return Err(Error::invalid("train and test covariates differ in dimension"));
        }
        let f0 = fit_fold(train, test_x, weights, opts, &plan, 0)?;
        let f1 = fit_fold(train, test_x, weights, opts, &plan, 1)?;
        Ok(Self {
            plan,
            folds: [f0, f1],
            n_test: test_x.nrows(),
        })
    }

    pub fn plan(&self) -> &SplitPlan {
        &self.plan
    }

    /// `p̃` for test point `j` on its fold's candidate grid.
    pub fn curve(&self, j: usize) -> Option<(&[f64], &[f64])> {
        self.folds.iter().find_map(|f| {
            f.test_idx
                .iter()
                .position(|&l| l == j)
                .map(|p| (f.grid.as_slice(), f.curves[p].as_slice()))
        })
    }

    pub fn thresholds(&self, level: f64) -> Vec<f64> {
        let mut out = vec![f64::INFINITY; self.n_test];
        for f in &self.folds {
            for (p, &j) in f.test_idx.iter().enumerate() {
                out[j] = threshold_from_suffix(&f.grid, &f.curves[p], level);
            }
        }
        out
    }

    /// Intervals at level `g⁻¹_{f,ρ}(1 − α)`; the method field of `cfg` is
    /// not consulted.
    pub fn intervals(&self, cfg: &MethodConfig) -> Vec<PredictionInterval> {
        let level = cfg.divergence.g_inverse(cfg.rho, 1.0 - cfg.alpha);
        let mut out = vec![PredictionInterval::from_center(0.0, f64::INFINITY); self.n_test];
        for (k, f) in self.folds.iter().enumerate() {
            for (p, &j) in f.test_idx.iter().enumerate() {
                let q = threshold_from_suffix(&f.grid, &f.curves[p], level);
                out[j] = PredictionInterval::from_center(f.centers[p], q).with_fold(k);
            }
        }
        out
    }
}

fn fit_fold(train: &Dataset, test_x: ArrayView2<'_, f64>, weights: &WeightSource, opts: &PipelineOptions, plan: &SplitPlan, k: usize) -> Result<FoldState> {
    let fit_fold = train.subset(plan.train_fold(1 - k));
    let cal = train.subset(plan.train_fold(k));
    let test_idx = plan.test_fold(k).to_vec();
    let model = opts.learners.regression.fit(fit_fold.x(), fit_fold.y())?;

    let fit_scores: Vec<f64> = (0..fit_fold.len())
        .map(|i| opts.score.apply(model.as_ref(), fit_fold.row(i), fit_fold.y()[i]))
        .collect();
    let cdf: Arc<dyn ConditionalCdf> = opts.learners.cdf.fit(fit_fold.x(), &fit_scores)?;
    let ratio: Arc<dyn DensityRatio> = match weights {
        WeightSource::Uniform => Arc::new(UnitRatio),
        WeightSource::Known(w) => w.clone(),
        WeightSource::Estimated => {
            let target = test_x.select(Axis(0), plan.test_fold(1 - k));
            opts.learners.ratio.fit(fit_fold.x(), target.view())?
        }
    };

    let cal_scores: Vec<f64> = (0..cal.len())
        .map(|i| opts.score.apply(model.as_ref(), cal.row(i), cal.y()[i]))
        .collect();
    let cal_w: Vec<f64> = cal.x().rows().into_iter().map(|r| ratio.ratio(r)).collect();
    let total_w: f64 = cal_w.iter().sum();
    if !(total_w > 0.0 && total_w.is_finite()) {
        return Err(Error::DegenerateWeights);
    }

    let mut grid = cal_scores.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid.push(f64::INFINITY);
    let m_grid = grid.len();

    // Calibration term A(t_j), accumulated in a fixed order.
    let mut order: Vec<usize> = (0..cal.len()).collect();
    order.sort_by(|&a, &b| cal_scores[a].total_cmp(&cal_scores[b]));
    let mut ind = vec![0.0; m_grid];
    let mut j = 0;
    let mut acc = 0.0;
    for (g, &t) in grid.iter().enumerate() {
        while j < order.len() && cal_scores[order[j]] <= t {
            acc += cal_w[order[j]];
            j += 1;
        }
        ind[g] = acc;
    }
    let cal_rows: Vec<Vec<f64>> = (0..cal.len())
        .into_par_iter()
        .map(|i| cdf.cdf_on_grid(cal.row(i), &grid))
        .collect();
    let mut smooth = vec![0.0; m_grid];
    for (i, row) in cal_rows.iter().enumerate() {
        for g in 0..m_grid {
            smooth[g] += cal_w[i] * row[g];
        }
    }
    let a: Vec<f64> = (0..m_grid).map(|g| (ind[g] - smooth[g]) / total_w).collect();

    let test_rows: Vec<Vec<f64>> = test_idx
        .par_iter()
        .map(|&l| cdf.cdf_on_grid(test_x.row(l), &grid))
        .collect();
    let mut sum_t = vec![0.0; m_grid];
    for row in &test_rows {
        for g in 0..m_grid {
            sum_t[g] += row[g];
        }
    }
    let denom = (test_idx.len() - 1) as f64;
    let curves = test_rows
        .par_iter()
        .map(|row| {
            let values: Vec<f64> = (0..m_grid).map(|g| a[g] + (sum_t[g] - row[g]) / denom).collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("coverage curve has a non-finite value".into()));
            }
            Ok(suffix_infimum(&values))
        })
        .collect::<Result<Vec<_>>>()?;
    let centers = test_idx.iter().map(|&l| model.predict(test_x.row(l))).collect();
    Ok(FoldState {
        test_idx,
        grid,
        curves,
        centers,
    })
}

/// Cross-fitted D-WRCP intervals. Weights are estimated unless `known_w` is
/// supplied.
pub fn run_dwrcp(
    train: &Dataset,
    test_x: ArrayView2<'_, f64>,
    cfg: &MethodConfig,
    known_w: Option<Arc<dyn DensityRatio>>,
    opts: &PipelineOptions,
    seed: u64,
) -> Result<Vec<PredictionInterval>> {
    let plan = SplitPlan::new(train.len(), test_x.nrows(), seed);
    let weights = known_w.map_or(WeightSource::Estimated, WeightSource::Known);
    run_dwrcp_with_plan(train, test_x, cfg, &weights, opts, plan)
}

pub fn run_dwrcp_with_plan(
    train: &Dataset,
    test_x: ArrayView2<'_, f64>,
    cfg: &MethodConfig,
    weights: &WeightSource,
    opts: &PipelineOptions,
    plan: SplitPlan,
) -> Result<Vec<PredictionInterval>> {
    Ok(DwrcpFit::fit(train, test_x, weights, opts, plan)?.intervals(cfg))
}
