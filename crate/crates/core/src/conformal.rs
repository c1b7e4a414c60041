//! Split conformal engine: CP, WCP, RCP and WRCP.
//!
//! All four methods share one threshold rule. Calibration scores `S_i` carry
//! raw weights `w(X_i)`, the test point contributes `w(x)` to an atom at
//! `+∞`, and the interval radius is the weighted quantile at level
//! `g⁻¹_{f,ρ}(1 − α)`:
//!
//! | method | weights | radius |
//! |--------|---------|--------|
//! | CP     | `1`     | `0`    |
//! | WCP    | `ŵ`     | `0`    |
//! | RCP    | `1`     | `ρ`    |
//! | WRCP   | `ŵ`     | `ρ`    |
//!
//! When `w` is not known, the test covariates are split in two folds and the
//! points of fold `k` are weighted by a classifier trained against the other
//! fold, so no test point is used to estimate its own weight.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::divergence::{FDivergence, RobustLevel};
use crate::error::{Error, Result};
use crate::estimators::{DensityRatio, Learners, Regressor, ScoreFunction, UnitRatio};
use crate::quantile::{ScoreSet, SortedScores};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cp,
    Wcp,
    Rcp,
    Wrcp,
    Dwrcp,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Cp, Method::Wcp, Method::Rcp, Method::Wrcp, Method::Dwrcp];

    /// Whether calibration points are reweighted by the covariate ratio.
    pub fn uses_weights(self) -> bool {
        matches!(self, Method::Wcp | Method::Wrcp | Method::Dwrcp)
    }

    /// Whether the level is inflated for a conditional shift.
    pub fn is_robust(self) -> bool {
        matches!(self, Method::Rcp | Method::Wrcp | Method::Dwrcp)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cp => "cp",
            Method::Wcp => "wcp",
            Method::Rcp => "rcp",
            Method::Wrcp => "wrcp",
            Method::Dwrcp => "dwrcp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace('-', "");
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == lower)
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}` (valid methods: cp, wcp, rcp, wrcp, dwrcp)")))
    }
}

/// One method at one robustness radius and miscoverage level.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodConfig {
    pub method: Method,
    pub divergence: FDivergence,
    pub rho: RobustLevel,
    pub alpha: f64,
}

impl MethodConfig {
    pub fn new(method: Method, divergence: FDivergence, rho: RobustLevel, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        Ok(Self {
            method,
            divergence,
            rho,
            alpha,
        })
    }

    pub fn cp(alpha: f64) -> Result<Self> {
        Self::new(Method::Cp, FDivergence::kl(), RobustLevel::ZERO, alpha)
    }

    /// Radius actually applied: zero for the non-robust methods.
    pub fn effective_rho(&self) -> RobustLevel {
        if self.method.is_robust() {
            self.rho
        } else {
            RobustLevel::ZERO
        }
    }

    /// `g⁻¹_{f,ρ}(1 − α)`.
    pub fn calibration_level(&self) -> f64 {
        self.divergence.g_inverse(self.effective_rho(), 1.0 - self.alpha)
    }

    /// Whether the calibrated set keeps exact `1 − α` coverage.
    pub fn keeps_nominal_coverage(&self) -> bool {
        self.divergence.g_condition_check(self.effective_rho(), self.alpha)
    }

    pub fn with_method(&self, method: Method) -> Self {
        Self { method, ..self.clone() }
    }

    pub fn with_rho(&self, rho: RobustLevel) -> Self {
        Self { rho, ..self.clone() }
    }
}

/// Index folds for split conformal: `tr0` fits, `tr1` calibrates; the test
/// folds pair up with density-ratio classifiers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub tr0: Vec<usize>,
    pub tr1: Vec<usize>,
    pub test0: Vec<usize>,
    pub test1: Vec<usize>,
    pub seed: u64,
}

impl SplitPlan {
    /// Seeded halves; an odd count puts the extra index in fold 0.
    pub fn new(n_train: usize, n_test: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (tr0, tr1) = halves(n_train, &mut rng);
        let (test0, test1) = halves(n_test, &mut rng);
        Self {
            tr0,
            tr1,
            test0,
            test1,
            seed,
        }
    }

    /// Fold labels exchanged on both sides.
    pub fn swapped(&self) -> Self {
        Self {
            tr0: self.tr1.clone(),
            tr1: self.tr0.clone(),
            test0: self.test1.clone(),
            test1: self.test0.clone(),
            seed: self.seed,
        }
    }

    pub fn train_fold(&self, k: usize) -> &[usize] {
        if k == 0 {
            &self.tr0
        } else {
            &self.tr1
        }
    }

    pub fn test_fold(&self, k: usize) -> &[usize] {
        if k == 0 {
            &self.test0
        } else {
            &self.test1
        }
    }

    /// Test fold of every test index.
    pub fn test_fold_labels(&self, n_test: usize) -> Vec<usize> {
        let mut out = vec![0; n_test];
        for &j in &self.test1 {
            out[j] = 1;
        }
        out
    }

    fn check_train(&self) -> Result<()> {
        if self.tr0.is_empty() || self.tr1.is_empty() {
            return Err(Error::EmptyFold("training data must provide both a fitting and a calibration fold".into()));
        }
        Ok(())
    }

    fn check_test(&self) -> Result<()> {
        if self.test0.is_empty() || self.test1.is_empty() {
            return Err(Error::EmptyFold("weight estimation needs at least two test points".into()));
        }
        Ok(())
    }
}

fn halves(n: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let cut = n.div_ceil(2);
    let second = idx.split_off(cut);
    let mut first = idx;
    first.sort_unstable();
    let mut second = second;
    second.sort_unstable();
    (first, second)
}

/// Interval `{y : |y − μ̂(x)| ≤ q}`; the whole line when `q = +∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub center: f64,
    pub threshold: f64,
    pub lower: f64,
    pub upper: f64,
    /// Test fold the interval was produced in.
    pub fold: usize,
}

impl PredictionInterval {
    pub fn from_center(center: f64, threshold: f64) -> Self {
        let (lower, upper) = if threshold.is_infinite() {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            (center - threshold, center + threshold)
        };
        Self {
            center,
            threshold,
            lower,
            upper,
            fold: 0,
        }
    }

    pub fn with_fold(mut self, fold: usize) -> Self {
        self.fold = fold;
        self
    }

    pub fn is_infinite(&self) -> bool {
        self.threshold == f64::INFINITY
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Inverts the absolute-residual score at `x`.
pub fn build_interval(x: ArrayView1<'_, f64>, model: &dyn Regressor, threshold: f64) -> PredictionInterval {
    PredictionInterval::from_center(model.predict(x), threshold)
}

/// Weighted quantile of the calibration scores at `g⁻¹_{f,ρ}(1 − α)`.
/// Methods that do not reweight (CP, RCP) ignore the supplied weights.
pub fn wrcp_threshold(cal_scores: &[f64], cal_raw_weights: &[f64], test_raw_weight: f64, cfg: &MethodConfig) -> Result<f64> {
    if cal_scores.len() != cal_raw_weights.len() {
        return Err(Error::invalid("calibration scores and weights differ in length"));
    }
    let set = if cfg.method.uses_weights() {
        ScoreSet::from_raw(cal_scores.to_vec(), cal_raw_weights, test_raw_weight)?
    } else {
        ScoreSet::exchangeable(cal_scores.to_vec())?
    };
    Ok(set.quantile(cfg.calibration_level()))
}

/// Where covariate-shift weights come from.
#[derive(Clone)]
pub enum WeightSource {
    /// `w ≡ 1`.
    Uniform,
    /// A known likelihood ratio.
    Known(Arc<dyn DensityRatio>),
    /// Classifier odds, cross-fitted over the two test folds.
    Estimated,
}

/// Settings shared by the split pipelines.
#[derive(Clone, Default)]
pub struct PipelineOptions {
    pub learners: Learners,
    pub score: ScoreFunction,
    /// Train each test point's ratio classifier on every other test point
    /// instead of the opposite fold. One fit per test point.
    pub leave_one_out_weights: bool,
}

/// Everything WRCP needs that does not depend on `(method, f, ρ, α)`.
pub struct WrcpFit {
    plan: SplitPlan,
    model: Arc<dyn Regressor>,
    cal_scores: Vec<f64>,
    /// Calibration weights under each fitted ratio.
    weight_sets: Vec<Vec<f64>>,
    ratio_models: Vec<Arc<dyn DensityRatio>>,
    centers: Vec<f64>,
    test_weights: Vec<f64>,
    test_set: Vec<usize>,
    test_fold: Vec<usize>,
}

impl WrcpFit {
    pub fn fit(train: &Dataset, test_x: ArrayView2<'_, f64>, weights: &WeightSource, opts: &PipelineOptions, plan: SplitPlan) -> Result<Self> {
        plan.check_train()?;
        if test_x.ncols() != train.dim() {
            return Err(Error::invalid("train and test covariates differ in dimension"));
        }
        let m = test_x.nrows();
        let fit_fold = train.subset(&plan.tr0);
        let model = opts.learners.regression.fit(fit_fold.x(), fit_fold.y())?;
        let cal_x = train.x().select(Axis(0), &plan.tr1);
        let cal_scores: Vec<f64> = plan
            .tr1
            .iter()
            .map(|&i| opts.score.apply(model.as_ref(), train.row(i), train.y()[i]))
            .collect();
        let centers: Vec<f64> = test_x.rows().into_iter().map(|r| model.predict(r)).collect();
        let test_fold = plan.test_fold_labels(m);

        let (ratio_models, test_set): (Vec<Arc<dyn DensityRatio>>, Vec<usize>) = match weights {
            WeightSource::Uniform => (vec![Arc::new(UnitRatio)], vec![0; m]),
            WeightSource::Known(w) => (vec![w.clone()], vec![0; m]),
            WeightSource::Estimated if opts.leave_one_out_weights => {
                if m < 2 {
                    return Err(Error::EmptyFold("weight estimation needs at least two test points".into()));
                }
                let models = (0..m)
                    .into_par_iter()
                    .map(|j| {
                        let others: Vec<usize> = (0..m).filter(|&l| l != j).collect();
                        let target = test_x.select(Axis(0), &others);
                        opts.learners.ratio.fit(fit_fold.x(), target.view())
                    })
                    .collect::<Result<Vec<_>>>()?;
                (models, (0..m).collect())
            }
            WeightSource::Estimated => {
                plan.check_test()?;
                let models = (0..2)
                    .map(|k| {
                        let target = test_x.select(Axis(0), plan.test_fold(1 - k));
                        opts.learners.ratio.fit(fit_fold.x(), target.view())
                    })
                    .collect::<Result<Vec<_>>>()?;
                (models, test_fold.clone())
            }
        };
        let weight_sets = ratio_models
            .iter()
            .map(|w| cal_x.rows().into_iter().map(|r| w.ratio(r)).collect())
            .collect();
        let test_weights = test_x
            .rows()
            .into_iter()
            .zip(&test_set)
            .map(|(r, &s)| ratio_models[s].ratio(r))
            .collect();
        Ok(Self {
            plan,
            model,
            cal_scores,
            weight_sets,
            ratio_models,
            centers,
            test_weights,
            test_set,
            test_fold,
        })
    }

    pub fn plan(&self) -> &SplitPlan {
        &self.plan
    }

    pub fn model(&self) -> &Arc<dyn Regressor> {
        &self.model
    }

    pub fn calibration_scores(&self) -> &[f64] {
        &self.cal_scores
    }

    pub fn n_test(&self) -> usize {
        self.centers.len()
    }

    pub fn test_fold(&self) -> &[usize] {
        &self.test_fold
    }

    /// Ratio model used for test fold `k` (or the shared model when weights
    /// are known or uniform).
    pub fn ratio_model_for_fold(&self, k: usize) -> &Arc<dyn DensityRatio> {
        let set = self
            .test_fold
            .iter()
            .position(|&f| f == k)
            .map(|j| self.test_set[j])
            .unwrap_or(0);
        &self.ratio_models[set]
    }

    /// Thresholds for every test point.
    pub fn thresholds(&self, cfg: &MethodConfig) -> Vec<f64> {
        let level = cfg.calibration_level();
        if !cfg.method.uses_weights() {
            let ones = vec![1.0; self.cal_scores.len()];
            let sorted = SortedScores::new(&self.cal_scores, &ones);
            let q = sorted.quantile(level, 1.0);
            return vec![q; self.n_test()];
        }
        let sorted: Vec<SortedScores> = self
            .weight_sets
            .par_iter()
            .map(|w| SortedScores::new(&self.cal_scores, w))
            .collect();
        (0..self.n_test())
            .into_par_iter()
            .map(|j| sorted[self.test_set[j]].quantile(level, self.test_weights[j]))
            .collect()
    }

    pub fn intervals(&self, cfg: &MethodConfig) -> Vec<PredictionInterval> {
        self.thresholds(cfg)
            .into_iter()
            .enumerate()
            .map(|(j, q)| PredictionInterval::from_center(self.centers[j], q).with_fold(self.test_fold[j]))
            .collect()
    }
}

/// Algorithm-level entry point: split, fit, calibrate, and emit one interval
/// per test row. Weights are estimated unless `known_w` is given or the
/// method does not reweight.
pub fn run_wrcp(
    train: &Dataset,
    test_x: ArrayView2<'_, f64>,
    cfg: &MethodConfig,
    known_w: Option<Arc<dyn DensityRatio>>,
    opts: &PipelineOptions,
    seed: u64,
) -> Result<Vec<PredictionInterval>> {
    let weights = match (cfg.method.uses_weights(), known_w) {
        (false, _) => WeightSource::Uniform,
        (true, Some(w)) => WeightSource::Known(w),
        (true, None) => WeightSource::Estimated,
    };
    let plan = SplitPlan::new(train.len(), test_x.nrows(), seed);
    Ok(WrcpFit::fit(train, test_x, &weights, opts, plan)?.intervals(cfg))
}

/// RCP radius matching a WRCP radius: `ρ + KL(Q_X ‖ P_X)`, with the KL term
/// estimated as the target mean of `log(ŵ / mean_source ŵ)` and floored at 0.
pub fn rho_rcp_adjust(rho: RobustLevel, ratio: &dyn DensityRatio, source: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<RobustLevel> {
    if source.nrows() == 0 || target.nrows() == 0 {
        return Err(Error::invalid("KL estimate needs nonempty source and target samples"));
    }
    let source_mean = source.rows().into_iter().map(|r| ratio.ratio(r)).sum::<f64>() / source.nrows() as f64;
    if !(source_mean > 0.0 && source_mean.is_finite()) {
        return Err(Error::Numerical("source mean of the density ratio is not positive".into()));
    }
    let kl = target
        .rows()
        .into_iter()
        .map(|r| (ratio.ratio(r) / source_mean).ln())
        .sum::<f64>()
        / target.nrows() as f64;
    RobustLevel::new(rho.value() + kl.max(0.0))
}
