//! Simulation designs, metrics, and the Monte Carlo experiment runner.
//!
//! Source: `X ~ N(0, I_d)`, `Y = μ(X) + ε`, `ε ~ N(0, 1)`, with `μ(x) = xᵀβ`
//! (`β` has `sparsity` entries equal to `coef` in the leading coordinates) or
//! the nonlinear `μ(x) = 1 / ((1 + e^{x₀})(1 + e^{−x₁}))`.
//!
//! Target: `X ~ N(β₀, I_d)` with `β₀ = (η, −η, 0, …)`, and the residual law
//! tilted by `c_in` on `|ε| < τ` and `c_out` on `|ε| ≥ τ`. The tilt is
//! renormalized to a probability law, so its KL radius is computed from the
//! normalized masses.
//!
//! Each run draws fresh data, fits every pipeline once, and scores all
//! `(method, f, ρ)` cells on the second test fold. Runs are independent and
//! seeded from `(seed, run)`, so the report does not depend on scheduling.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::conformal::{rho_rcp_adjust, Method, MethodConfig, PipelineOptions, PredictionInterval, SplitPlan, WeightSource, WrcpFit};
use crate::data::Dataset;
use crate::debiased::DwrcpFit;
use crate::divergence::{FDivergence, RobustLevel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Linear response, covariate shift `η` and the tilt.
    Linear,
    /// Linear response, tilt only (`η` forced to 0).
    NoXShift,
    /// Linear response, covariate shift only (tilt off).
    NoCondShift,
    /// Nonlinear response, covariate shift `η` and the tilt.
    Nonlinear,
}

/// Two-region density ratio of the target residual law against `N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tilt {
    pub c_in: f64,
    pub c_out: f64,
    pub tau: f64,
}

impl Default for Tilt {
    fn default() -> Self {
        Self {
            c_in: 0.96,
            c_out: 1.59,
            tau: 1.86,
        }
    }
}

impl Tilt {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_in > 0.0 && self.c_out > 0.0 && self.tau > 0.0) || !(self.c_in.is_finite() && self.c_out.is_finite() && self.tau.is_finite()) {
            return Err(Error::invalid("tilt constants must be positive and finite"));
        }
        Ok(())
    }

    /// `P(|ε| < τ)` under `N(0, 1)`.
    pub fn inside_mass(&self) -> f64 {
        2.0 * Normal::standard().cdf(self.tau) - 1.0
    }

    /// `c_in P(|ε| < τ) + c_out P(|ε| ≥ τ)` before renormalization.
    pub fn total_mass(&self) -> f64 {
        let p = self.inside_mass();
        self.c_in * p + self.c_out * (1.0 - p)
    }

    /// Probability of the inside region under the renormalized tilt.
    pub fn inside_probability(&self) -> f64 {
        self.c_in * self.inside_mass() / self.total_mass()
    }

    /// `KL(Q_{Y|X} ‖ P_{Y|X})` of the renormalized tilt.
    pub fn kl(&self) -> f64 {
        let m = self.total_mass();
        let q = self.inside_probability();
        q * (self.c_in / m).ln() + (1.0 - q) * (self.c_out / m).ln()
    }

    /// Draws a residual from the renormalized tilt.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if rng.random::<f64>() < self.inside_probability() {
            loop {
                let e: f64 = rng.sample(StandardNormal);
                if e.abs() < self.tau {
                    return e;
                }
            }
        }
        let n = Normal::standard();
        let lo = n.cdf(self.tau);
        let u: f64 = rng.random();
        let e = n.inverse_cdf(lo + u * (1.0 - lo)).max(self.tau);
        if rng.random::<bool>() {
            e
        } else {
            -e
        }
    }
}

/// Declarative description of one simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub d: usize,
    pub sparsity: usize,
    pub coef: f64,
    pub eta: f64,
    pub tilt: Tilt,
    pub n_train: usize,
    pub n_test: usize,
    pub rho_grid: Vec<f64>,
    pub alpha: f64,
    pub n_runs: usize,
    pub seed: u64,
    /// Stand-in length for infinite intervals in the length metric.
    pub cap: f64,
    pub methods: Vec<Method>,
    pub divergences: Vec<FDivergence>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Linear,
            d: 50,
            sparsity: 10,
            coef: 0.47,
            eta: 0.5,
            tilt: Tilt::default(),
            n_train: 500,
            n_test: 500,
            rho_grid: vec![0.005, 0.01, 0.015, 0.02, 0.025],
            alpha: 0.1,
            n_runs: 20,
            seed: 2024,
            cap: 17.0,
            methods: Method::ALL.to_vec(),
            divergences: vec![FDivergence::kl()],
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.sparsity > self.d {
            return Err(Error::invalid(format!("need d > 0 and sparsity <= d, got sparsity {} and d {}", self.sparsity, self.d)));
        }
        if self.scenario == Scenario::Nonlinear && self.d < 2 {
            return Err(Error::invalid("the nonlinear response needs d >= 2"));
        }
        if self.n_train < 4 || self.n_test < 4 {
            return Err(Error::invalid("n_train and n_test must be at least 4"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.n_runs == 0 {
            return Err(Error::invalid("n_runs must be positive"));
        }
        if self.cap.is_nan() || self.cap <= 0.0 {
            return Err(Error::invalid("cap must be positive"));
        }
        if self.rho_grid.is_empty() || self.methods.is_empty() || self.divergences.is_empty() {
            return Err(Error::invalid("rho_grid, methods and divergences must be nonempty"));
        }
        for &r in &self.rho_grid {
            RobustLevel::new(r)?;
        }
        if !self.eta.is_finite() || !self.coef.is_finite() {
            return Err(Error::invalid("eta and coef must be finite"));
        }
        self.tilt.validate()
    }

    pub fn effective_eta(&self) -> f64 {
        match self.scenario {
            Scenario::NoXShift => 0.0,
            _ => self.eta,
        }
    }

    pub fn tilt_active(&self) -> bool {
        self.scenario != Scenario::NoCondShift
    }

    /// True conditional radius of the target (KL).
    pub fn rho_star(&self) -> f64 {
        if self.tilt_active() {
            self.tilt.kl()
        } else {
            0.0
        }
    }

    pub fn beta(&self) -> Vec<f64> {
        (0..self.d).map(|j| if j < self.sparsity { self.coef } else { 0.0 }).collect()
    }

    pub fn mean_response(&self, x: ArrayView1<'_, f64>) -> f64 {
        match self.scenario {
            Scenario::Nonlinear => 1.0 / ((1.0 + x[0].exp()) * (1.0 + (-x[1]).exp())),
            _ => x.iter().take(self.sparsity).map(|v| v * self.coef).sum(),
        }
    }

    /// Exact `dQ_X / dP_X` at `x`.
    pub fn covariate_ratio(&self, x: ArrayView1<'_, f64>) -> f64 {
        let eta = self.effective_eta();
        if eta == 0.0 || self.d < 2 {
            return 1.0;
        }
        (eta * x[0] - eta * x[1] - eta * eta).exp()
    }
}

fn draw(cfg: &SimConfig, n: usize, shift: f64, tilted: bool, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let x = Array2::from_shape_fn((n, cfg.d), |(_, j)| {
        let mu = match j {
            0 => shift,
            1 => -shift,
            _ => 0.0,
        };
        mu + rng.sample::<f64, _>(StandardNormal)
    });
    let y = x
        .axis_iter(Axis(0))
        .map(|r| {
            let e = if tilted { cfg.tilt.sample(rng) } else { rng.sample(StandardNormal) };
            cfg.mean_response(r) + e
        })
        .collect();
    Dataset::new(x, y)
}

/// Labeled draws from the source law.
pub fn simulate_source(cfg: &SimConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    draw(cfg, n, 0.0, false, rng)
}

/// Labeled draws from the target law.
pub fn simulate_target(cfg: &SimConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    draw(cfg, n, cfg.effective_eta(), cfg.tilt_active(), rng)
}

/// Coverage, capped mean length and infinite-interval rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub coverage: f64,
    pub length: f64,
    pub infinite_rate: f64,
    pub covered: usize,
    pub infinite: usize,
    pub evaluated: usize,
}

pub fn metrics(intervals: &[PredictionInterval], truths: &[f64], cap: f64) -> Result<Metrics> {
    if intervals.is_empty() || intervals.len() != truths.len() {
        return Err(Error::invalid("metrics need matching nonempty intervals and outcomes"));
    }
    let n = intervals.len() as f64;
    let covered = intervals.iter().zip(truths).filter(|(iv, &y)| iv.contains(y)).count();
    let length = intervals.iter().map(|iv| iv.length().min(cap)).sum::<f64>() / n;
    let infinite = intervals.iter().filter(|iv| iv.is_infinite()).count();
    Ok(Metrics {
        coverage: covered as f64 / n,
        length,
        infinite_rate: infinite as f64 / n,
        covered,
        infinite,
        evaluated: intervals.len(),
    })
}

/// One `(method, f, ρ)` cell of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub method: Method,
    pub divergence: String,
    pub rho: f64,
    pub coverage: f64,
    pub length: f64,
    pub infinite_rate: f64,
    pub covered: usize,
    pub infinite: usize,
    pub evaluated: usize,
}

/// Across-run summary of one cell; half-widths are `1.96` standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    pub divergence: String,
    pub rho: f64,
    pub coverage: f64,
    pub coverage_half_width: f64,
    pub length: f64,
    pub length_half_width: f64,
    pub infinite_rate: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: SimConfig,
    pub rho_star: f64,
    pub cells: Vec<CellSummary>,
    pub runs: Vec<RunRecord>,
}

impl ExperimentReport {
    pub fn cell(&self, method: Method, divergence: &str, rho: f64) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.divergence == divergence && c.rho == rho)
    }
}

/// Runs every cell of `cfg`.
pub fn run_experiment(cfg: &SimConfig) -> Result<ExperimentReport> {
    run_experiment_filtered(cfg, &PipelineOptions::default(), |_, _, _| true)
}

/// Runs the cells accepted by `keep(method, divergence, rho)`. Data draws do
/// not depend on the filter, so a filtered report agrees with the full one on
/// every cell it contains.
pub fn run_experiment_filtered<F>(cfg: &SimConfig, opts: &PipelineOptions, keep: F) -> Result<ExperimentReport>
where
    F: Fn(Method, &str, f64) -> bool + Sync,
{
    cfg.validate()?;
    let runs: Vec<RunRecord> = (0..cfg.n_runs)
        .into_par_iter()
        .map(|r| run_once(cfg, opts, r, &keep))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(report_from_runs(cfg, runs))
}

/// Orders per-run records canonically and summarizes them into a report.
pub fn report_from_runs(cfg: &SimConfig, mut runs: Vec<RunRecord>) -> ExperimentReport {
    runs.sort_by(|a, b| {
        (a.method, &a.divergence, a.run)
            .cmp(&(b.method, &b.divergence, b.run))
            .then(a.rho.total_cmp(&b.rho))
    });
    ExperimentReport {
        config: cfg.clone(),
        rho_star: cfg.rho_star(),
        cells: summarize(&runs),
        runs,
    }
}

fn draw_run(cfg: &SimConfig, run: usize) -> Result<(Dataset, Dataset, ChaCha8Rng)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(run as u64);
    let train = simulate_source(cfg, cfg.n_train, &mut rng)?;
    let test = simulate_target(cfg, cfg.n_test, &mut rng)?;
    Ok((train, test, rng))
}

/// The `(source, target)` samples of run `run`, exactly as the experiment
/// runner draws them.
pub fn run_data(cfg: &SimConfig, run: usize) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let (train, test, _) = draw_run(cfg, run)?;
    Ok((train, test))
}

fn run_once<F>(cfg: &SimConfig, opts: &PipelineOptions, run: usize, keep: &F) -> Result<Vec<RunRecord>>
where
    F: Fn(Method, &str, f64) -> bool + Sync,
{
    let (train, test, mut rng) = draw_run(cfg, run)?;
    let plan = SplitPlan::new(cfg.n_train, cfg.n_test, rng.random());

    let wanted = |m: Method| {
        cfg.methods.contains(&m)
            && cfg
                .divergences
                .iter()
                .any(|f| cfg.rho_grid.iter().any(|&r| keep(m, f.name(), r)))
    };
    let split_needed = [Method::Cp, Method::Wcp, Method::Rcp, Method::Wrcp].into_iter().any(wanted);
    let wrcp = if split_needed {
        Some(WrcpFit::fit(&train, test.x(), &WeightSource::Estimated, opts, plan.clone())?)
    } else {
        None
    };
    let dwrcp = if wanted(Method::Dwrcp) {
        Some(DwrcpFit::fit(&train, test.x(), &WeightSource::Estimated, opts, plan.clone())?)
    } else {
        None
    };

    let eval_idx = &plan.test1;
    let truths: Vec<f64> = eval_idx.iter().map(|&j| test.y()[j]).collect();
    let kl_x = match &wrcp {
        Some(fit) if cfg.methods.contains(&Method::Rcp) => {
            let source = train.x().select(Axis(0), &plan.tr1);
            let target = test.x().select(Axis(0), eval_idx);
            rho_rcp_adjust(RobustLevel::ZERO, fit.ratio_model_for_fold(1).as_ref(), source.view(), target.view())?.value()
        }
        _ => 0.0,
    };

    let mut out = Vec::new();
    for method in &cfg.methods {
        for f in &cfg.divergences {
            for &rho in &cfg.rho_grid {
                if !keep(*method, f.name(), rho) {
                    continue;
                }
                let applied = if *method == Method::Rcp { rho + kl_x } else { rho };
                let mc = MethodConfig::new(*method, f.clone(), RobustLevel::new(applied)?, cfg.alpha)?;
                let all = match method {
                    Method::Dwrcp => dwrcp.as_ref().map(|d| d.intervals(&mc)),
                    _ => wrcp.as_ref().map(|w| w.intervals(&mc)),
                }
                .ok_or_else(|| Error::Numerical("pipeline was not fitted".into()))?;
                let ivs: Vec<PredictionInterval> = eval_idx.iter().map(|&j| all[j]).collect();
                let m = metrics(&ivs, &truths, cfg.cap)?;
                out.push(RunRecord {
                    run,
                    method: *method,
                    divergence: f.name().to_string(),
                    rho,
                    coverage: m.coverage,
                    length: m.length,
                    infinite_rate: m.infinite_rate,
                    covered: m.covered,
                    infinite: m.infinite,
                    evaluated: m.evaluated,
                });
            }
        }
    }
    Ok(out)
}

fn mean_half_width(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

fn summarize(runs: &[RunRecord]) -> Vec<CellSummary> {
    let mut groups: BTreeMap<(Method, String, u64), Vec<&RunRecord>> = BTreeMap::new();
    for r in runs {
        groups
            .entry((r.method, r.divergence.clone(), r.rho.to_bits()))
            .or_default()
            .push(r);
    }
    let mut cells: Vec<CellSummary> = groups
        .into_values()
        .map(|g| {
            let cov: Vec<f64> = g.iter().map(|r| r.coverage).collect();
            let len: Vec<f64> = g.iter().map(|r| r.length).collect();
            // Pooled counts keep the mean an exact quotient.
            let (_, coverage_half_width) = mean_half_width(&cov);
            let evaluated = g.iter().map(|r| r.evaluated).sum::<usize>() as f64;
            let coverage = g.iter().map(|r| r.covered).sum::<usize>() as f64 / evaluated;
            let (length, length_half_width) = mean_half_width(&len);
            CellSummary {
                method: g[0].method,
                divergence: g[0].divergence.clone(),
                rho: g[0].rho,
                coverage,
                coverage_half_width,
                length,
                length_half_width,
                infinite_rate: g.iter().map(|r| r.infinite).sum::<usize>() as f64 / evaluated,
                runs: g.len(),
            }
        })
        .collect();
    cells.sort_by(|a, b| (a.method, &a.divergence).cmp(&(b.method, &b.divergence)).then(a.rho.total_cmp(&b.rho)));
    cells
}
