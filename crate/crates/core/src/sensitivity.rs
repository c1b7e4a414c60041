//! Counterfactual and ITE intervals under the f-sensitivity model.
//!
//! Predicting `Y(t₁)` on the population `T = t₂` from units observed under
//! `T = t₁` is a decomposed shift: the covariate part is a known function of
//! the propensity score, and hidden confounding moves `Y(t₁) | X` by at most
//! `ρ` in f-divergence. Calibration uses the fold-1 units with `T = t₁`,
//! weighted by [`sensitivity_weight`].
//!
//! The same `ρ` is used for every target population.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::conformal::{MethodConfig, PipelineOptions, PredictionInterval, SplitPlan};
use crate::data::{Dataset, ObservationalData};
use crate::error::{Error, Result};
use crate::estimators::{PropensityModel, Regressor};
use crate::quantile::SortedScores;

/// Population `T = t₂` the interval must cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetPopulation {
    Treated,
    Control,
    Whole,
}

impl TargetPopulation {
    pub fn arm(self) -> Option<u8> {
        match self {
            TargetPopulation::Treated => Some(1),
            TargetPopulation::Control => Some(0),
            TargetPopulation::Whole => None,
        }
    }
}

impl fmt::Display for TargetPopulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetPopulation::Treated => "1",
            TargetPopulation::Control => "0",
            TargetPopulation::Whole => "all",
        })
    }
}

impl FromStr for TargetPopulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1" | "treated" => Ok(TargetPopulation::Treated),
            "0" | "control" => Ok(TargetPopulation::Control),
            "all" | "whole" => Ok(TargetPopulation::Whole),
            _ => Err(Error::invalid(format!("unknown target population `{s}` (valid: 0, 1, all)"))),
        }
    }
}

/// Counterfactual arm `t₁` and target population `t₂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensitivityTarget {
    t1: u8,
    t2: TargetPopulation,
}

impl SensitivityTarget {
    pub fn new(t1: u8, t2: TargetPopulation) -> Result<Self> {
        if t1 > 1 {
            return Err(Error::invalid(format!("counterfactual arm must be 0 or 1, got {t1}")));
        }
        Ok(Self { t1, t2 })
    }

    pub fn t1(&self) -> u8 {
        self.t1
    }

    pub fn t2(&self) -> TargetPopulation {
        self.t2
    }
}

/// Marginal arm probabilities `p₁ = P(T = 1)`, `p₀ = 1 − p₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmRates {
    p1: f64,
}

impl ArmRates {
    pub fn new(p1: f64) -> Result<Self> {
        if !(p1 > 0.0 && p1 < 1.0) {
            return Err(Error::DegenerateTreatmentArm(format!("treated fraction {p1} is not inside (0, 1)")));
        }
        Ok(Self { p1 })
    }

    pub fn from_treatments(t: &[u8]) -> Result<Self> {
        if t.is_empty() {
            return Err(Error::DegenerateTreatmentArm("no units".into()));
        }
        let treated = t.iter().filter(|&&v| v == 1).count();
        Self::new(treated as f64 / t.len() as f64)
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }

    pub fn p0(&self) -> f64 {
        1.0 - self.p1
    }
}

/// Covariate shift `dP_{X | T = t₂} / dP_{X | T = t₁}` in terms of the
/// propensity `e = e(x)`.
pub fn sensitivity_weight(target: SensitivityTarget, e: f64, rates: ArmRates) -> f64 {
    let (p1, p0) = (rates.p1(), rates.p0());
    match (target.t1, target.t2) {
        (1, TargetPopulation::Treated) | (0, TargetPopulation::Control) => 1.0,
        (1, TargetPopulation::Control) => (1.0 - e) / e * (p1 / p0),
        (1, TargetPopulation::Whole) => p1 / e,
        (0, TargetPopulation::Treated) => e / (1.0 - e) * (p0 / p1),
        (_, _) => p0 / (1.0 - e),
    }
}

/// Fitted state for one counterfactual arm, reusable across target
/// populations and levels.
pub struct CounterfactualFit {
    t1: u8,
    model: Arc<dyn Regressor>,
    propensity: Arc<dyn PropensityModel>,
    rates: ArmRates,
    eps: f64,
    cal_scores: Vec<f64>,
    cal_e: Vec<f64>,
}

impl CounterfactualFit {
    /// Fits `μ̂^(t₁)` on fold-0 units with `T = t₁` and (unless `known_e` is
    /// given) `ê` on fold 0, then scores fold-1 units with `T = t₁`.
    pub fn fit(data: &ObservationalData, t1: u8, known_e: Option<Arc<dyn PropensityModel>>, opts: &PipelineOptions, plan: &SplitPlan) -> Result<Self> {
        if t1 > 1 {
            return Err(Error::invalid(format!("counterfactual arm must be 0 or 1, got {t1}")));
        }
        let fold0 = data.subset(&plan.tr0);
        let fold1 = data.subset(&plan.tr1);
        let arm = |d: &ObservationalData| -> Result<Dataset> {
            let idx: Vec<usize> = (0..d.len()).filter(|&i| d.t()[i] == t1).collect();
            if idx.is_empty() {
                return Err(Error::DegenerateTreatmentArm(format!("no units with T = {t1} in a fold")));
            }
            Dataset::new(d.x().select(Axis(0), &idx), idx.iter().map(|&i| d.y()[i]).collect())
        };
        let fit_arm = arm(&fold0)?;
        let cal_arm = arm(&fold1)?;
        let rates = ArmRates::from_treatments(fold0.t())?;
        let model = opts.learners.regression.fit(fit_arm.x(), fit_arm.y())?;
        let propensity = match known_e {
            Some(e) => e,
            None => opts.learners.propensity.fit(fold0.x(), fold0.t())?,
        };
        let eps = 0.01;
        let cal_scores = (0..cal_arm.len())
            .map(|i| opts.score.apply(model.as_ref(), cal_arm.row(i), cal_arm.y()[i]))
            .collect();
        let cal_e = cal_arm
            .x()
            .rows()
            .into_iter()
            .map(|r| propensity.propensity(r).clamp(eps, 1.0 - eps))
            .collect();
        Ok(Self {
            t1,
            model,
            propensity,
            rates,
            eps,
            cal_scores,
            cal_e,
        })
    }

    pub fn rates(&self) -> ArmRates {
        self.rates
    }

    pub fn calibration_scores(&self) -> &[f64] {
        &self.cal_scores
    }

    pub fn propensity(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.propensity.propensity(x).clamp(self.eps, 1.0 - self.eps)
    }

    /// Calibration weights for population `t2`.
    pub fn calibration_weights(&self, t2: TargetPopulation) -> Vec<f64> {
        let target = SensitivityTarget { t1: self.t1, t2 };
        self.cal_e.iter().map(|&e| sensitivity_weight(target, e, self.rates)).collect()
    }

    /// Methods that do not reweight calibrate with unit weights.
    pub fn intervals(&self, test_x: ArrayView2<'_, f64>, t2: TargetPopulation, cfg: &MethodConfig) -> Vec<PredictionInterval> {
        let target = SensitivityTarget { t1: self.t1, t2 };
        let level = cfg.calibration_level();
        let weighted = cfg.method.uses_weights();
        let cal_w = if weighted {
            self.calibration_weights(t2)
        } else {
            vec![1.0; self.cal_scores.len()]
        };
        let sorted = SortedScores::new(&self.cal_scores, &cal_w);
        test_x
            .rows()
            .into_iter()
            .map(|r| {
                let w = if weighted {
                    sensitivity_weight(target, self.propensity(r), self.rates)
                } else {
                    1.0
                };
                PredictionInterval::from_center(self.model.predict(r), sorted.quantile(level, w))
            })
            .collect()
    }
}

/// Intervals for `Y(t₁)` on the population `t₂` for every test row.
pub fn counterfactual_intervals(
    data: &ObservationalData,
    test_x: ArrayView2<'_, f64>,
    target: SensitivityTarget,
    cfg: &MethodConfig,
    known_e: Option<Arc<dyn PropensityModel>>,
    opts: &PipelineOptions,
    seed: u64,
) -> Result<Vec<PredictionInterval>> {
    check_dims(data, test_x)?;
    let plan = SplitPlan::new(data.len(), 0, seed);
    let fit = CounterfactualFit::fit(data, target.t1, known_e, opts, &plan)?;
    Ok(fit.intervals(test_x, target.t2, cfg))
}

/// Single-row convenience wrapper.
pub fn counterfactual_interval(
    data: &ObservationalData,
    test_x: ArrayView1<'_, f64>,
    target: SensitivityTarget,
    cfg: &MethodConfig,
    opts: &PipelineOptions,
    seed: u64,
) -> Result<PredictionInterval> {
    let x = test_x.insert_axis(Axis(0));
    Ok(counterfactual_intervals(data, x, target, cfg, None, opts, seed)?[0])
}

fn check_dims(data: &ObservationalData, test_x: ArrayView2<'_, f64>) -> Result<()> {
    if test_x.ncols() != data.dim() {
        return Err(Error::invalid("observational and test covariates differ in dimension"));
    }
    Ok(())
}

/// Miscoverage budget `(α₁, α₂)` for the two arms; `None` splits evenly.
pub fn ite_budget(alpha: f64, split: Option<(f64, f64)>) -> Result<(f64, f64)> {
    let (a1, a0) = split.unwrap_or((alpha / 2.0, alpha / 2.0));
    if !(a1 > 0.0 && a0 > 0.0) || (a1 + a0 - alpha).abs() > 1e-12 {
        return Err(Error::invalid(format!("budget split ({a1}, {a0}) must be positive and sum to alpha = {alpha}")));
    }
    Ok((a1, a0))
}

/// `[L₁ − U₀, U₁ − L₀]` from per-arm intervals.
pub fn combine_ite(c1: &PredictionInterval, c0: &PredictionInterval) -> PredictionInterval {
    PredictionInterval::from_center(c1.center - c0.center, c1.threshold + c0.threshold)
}

/// Union-bound interval for `Y(1) − Y(0)` on population `t2`: `Y(1)` at
/// level `1 − α₁`, `Y(0)` at `1 − α₂`.
#[allow(clippy::too_many_arguments)]
pub fn ite_intervals(
    data: &ObservationalData,
    test_x: ArrayView2<'_, f64>,
    t2: TargetPopulation,
    cfg: &MethodConfig,
    budget_split: Option<(f64, f64)>,
    known_e: Option<Arc<dyn PropensityModel>>,
    opts: &PipelineOptions,
    seed: u64,
) -> Result<Vec<PredictionInterval>> {
    check_dims(data, test_x)?;
    let (a1, a0) = ite_budget(cfg.alpha, budget_split)?;
    let plan = SplitPlan::new(data.len(), 0, seed);
    let fit1 = CounterfactualFit::fit(data, 1, known_e.clone(), opts, &plan)?;
    let fit0 = CounterfactualFit::fit(data, 0, known_e, opts, &plan)?;
    let c1 = fit1.intervals(test_x, t2, &MethodConfig { alpha: a1, ..cfg.clone() });
    let c0 = fit0.intervals(test_x, t2, &MethodConfig { alpha: a0, ..cfg.clone() });
    Ok(c1.iter().zip(&c0).map(|(a, b)| combine_ite(a, b)).collect())
}

/// Synthetic observational design with a known amount of hidden confounding.
///
/// `X ~ N(0, I_d)`, independent `ε, ε₀ ~ N(0, 1)`, `Y(1) = μ₁(X) + ε`,
/// `Y(0) = μ₀(X) + ε₀`, and treatment `T ~ Bernoulli(σ(γ X₀ + δ · 1{|ε| ≥ τ}))`.
/// Only `Y(1)` is confounded. Given `X`, the law of `ε` in either arm only
/// reweights the two regions `|ε| < τ` and `|ε| ≥ τ`, so the conditional
/// divergence between arms is a two-point KL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfoundedDesign {
    pub d: usize,
    pub gamma: f64,
    pub delta: f64,
    pub tau: f64,
    pub beta1: Vec<f64>,
    pub beta0: Vec<f64>,
}

/// One draw with both potential outcomes.
#[derive(Debug, Clone)]
pub struct ConfoundedSample {
    pub data: ObservationalData,
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
}

impl Default for ConfoundedDesign {
    fn default() -> Self {
        Self {
            d: 2,
            gamma: 0.5,
            delta: -1.0,
            tau: 1.5,
            beta1: vec![1.0, 0.5],
            beta0: vec![-0.5, 1.0],
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    term(p, q) + term(1.0 - p, 1.0 - q)
}

impl ConfoundedDesign {
    /// Randomized trial: `e ≡ 1/2`, no hidden confounding.
    pub fn randomized(d: usize) -> Self {
        Self {
            d,
            gamma: 0.0,
            delta: 0.0,
            tau: 1.5,
            beta1: (0..d).map(|j| if j == 0 { 1.0 } else { 0.0 }).collect(),
            beta0: vec![0.0; d],
        }
    }

    fn mean(beta: &[f64], x: ArrayView1<'_, f64>) -> f64 {
        beta.iter().zip(x.iter()).map(|(b, v)| b * v).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<ConfoundedSample> {
        if self.beta1.len() != self.d || self.beta0.len() != self.d || self.d == 0 {
            return Err(Error::invalid("outcome coefficients must match the covariate dimension"));
        }
        let x = Array2::from_shape_fn((n, self.d), |_| rng.sample::<f64, _>(StandardNormal));
        let mut t = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut y1 = Vec::with_capacity(n);
        let mut y0 = Vec::with_capacity(n);
        for r in x.rows() {
            let eps: f64 = rng.sample(StandardNormal);
            let out = if eps.abs() >= self.tau { 1.0 } else { 0.0 };
            let p = sigmoid(self.gamma * r[0] + self.delta * out);
            let ti = u8::from(rng.random::<f64>() < p);
            let a = Self::mean(&self.beta1, r) + eps;
            let b = Self::mean(&self.beta0, r) + rng.sample::<f64, _>(StandardNormal);
            t.push(ti);
            y.push(if ti == 1 { a } else { b });
            y1.push(a);
            y0.push(b);
        }
        Ok(ConfoundedSample {
            data: ObservationalData::new(x, t, y)?,
            y1,
            y0,
        })
    }

    /// `P(|ε| ≥ τ)`.
    pub fn outside_mass(&self) -> f64 {
        let n = Normal::standard();
        2.0 * (1.0 - n.cdf(self.tau))
    }

    /// Observable propensity `e(x)`.
    pub fn propensity(&self, x: ArrayView1<'_, f64>) -> f64 {
        let out = self.outside_mass();
        let a = self.gamma * x[0];
        (1.0 - out) * sigmoid(a) + out * sigmoid(a + self.delta)
    }

    /// Outside-region probability of `ε` given `X₀ = x0` in arm `arm`.
    fn outside_share(&self, x0: f64, arm: u8) -> f64 {
        let out = self.outside_mass();
        let a = self.gamma * x0;
        let (pin, pout) = if arm == 1 {
            (sigmoid(a), sigmoid(a + self.delta))
        } else {
            (1.0 - sigmoid(a), 1.0 - sigmoid(a + self.delta))
        };
        out * pout / ((1.0 - out) * pin + out * pout)
    }

    /// `KL(P_{Y(t₁) | X, T = 1 − t₁} ‖ P_{Y(t₁) | X, T = t₁})` at `X₀ = x0`.
    pub fn conditional_kl(&self, x0: f64, t1: u8) -> f64 {
        if t1 == 0 {
            return 0.0;
        }
        bernoulli_kl(self.outside_share(x0, 0), self.outside_share(x0, 1))
    }

    /// Supremum of [`Self::conditional_kl`] over `x0 ∈ [−20, 20]`.
    pub fn rho_star(&self, t1: u8) -> f64 {
        (0..=40_000)
            .map(|i| self.conditional_kl(-20.0 + i as f64 * 1e-3, t1))
            .fold(0.0, f64::max)
    }
}
