use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::info;

use robust_conformal::bench::{report_from_runs, run_data, run_experiment_filtered, ExperimentReport, SimConfig};
use robust_conformal::conformal::{PipelineOptions, WeightSource, WrcpFit};
use robust_conformal::debiased::DwrcpFit;
use robust_conformal::sensitivity::{ite_intervals, CounterfactualFit};
use robust_conformal::{Method, SplitPlan};

use crate::config::{PredictConfig, SensitivityConfig, SimulateConfig, WeightMode};
use crate::error::{CliError, CliResult};
use crate::output::OutputDir;
use crate::table::{read_table, write_records_to, write_table_to, Estimand, IntervalRow, SensitivityRow, Table};

fn require(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::data(format!("{}: no such file", path.display())))
    }
}

fn io(e: std::io::Error) -> CliError {
    CliError::data(e.to_string())
}

/// Writes `source.csv` and `target.csv`, the first run of the study.
pub fn simulate(cfg: &SimulateConfig, out: &Path) -> CliResult<PathBuf> {
    let (source, target) = run_data(&cfg.sim_config(), 0)?;
    let dir = OutputDir::open(out)?;
    for (name, data) in [("source.csv", source), ("target.csv", target)] {
        let (x, y) = data.into_parts();
        let table = Table { x, y: Some(y), t: None };
        dir.write(name, |w| write_table_to(w, &table))?;
    }
    dir.commit()
}

fn check_dims(train: &Table, test: &Table) -> CliResult<()> {
    if train.dim() != test.dim() {
        return Err(CliError::data(format!(
            "training data has {} covariates but test data has {}",
            train.dim(),
            test.dim()
        )));
    }
    Ok(())
}

fn log_coverage(label: &str, lower: impl Iterator<Item = (f64, f64)>, truth: Option<&[f64]>) {
    if let Some(y) = truth {
        let hits = lower.zip(y).filter(|((l, u), &v)| *l <= v && v <= *u).count();
        info!("{label}: coverage {:.4} on {} labeled test rows", hits as f64 / y.len() as f64, y.len());
    }
}

/// Intervals for every test row under every `(method, ρ)` block.
pub fn predict_rows(cfg: &PredictConfig, train: &Table, test: &Table) -> CliResult<Vec<IntervalRow>> {
    check_dims(train, test)?;
    let data = train.labeled("train")?;
    let plan = SplitPlan::new(data.len(), test.len(), cfg.seed);
    let weights = match cfg.weights {
        WeightMode::Estimated => WeightSource::Estimated,
        WeightMode::Uniform => WeightSource::Uniform,
    };
    let opts = PipelineOptions::default();
    let blocks = cfg.blocks()?;
    let split = if blocks.iter().any(|b| b.method != Method::Dwrcp) {
        Some(WrcpFit::fit(&data, test.x.view(), &weights, &opts, plan.clone())?)
    } else {
        None
    };
    let debiased = if blocks.iter().any(|b| b.method == Method::Dwrcp) {
        Some(DwrcpFit::fit(&data, test.x.view(), &weights, &opts, plan)?)
    } else {
        None
    };
    let mut rows = Vec::with_capacity(blocks.len() * test.len());
    for b in &blocks {
        let ivs = match (b.method, &split, &debiased) {
            (Method::Dwrcp, _, Some(d)) => d.intervals(b),
            (_, Some(s), _) => s.intervals(b),
            _ => unreachable!("every block has a fitted pipeline"),
        };
        let label = format!("{} rho={}", b.method, b.rho.value());
        log_coverage(&label, ivs.iter().map(|iv| (iv.lower, iv.upper)), test.y.as_deref());
        rows.extend(
            ivs.iter()
                .enumerate()
                .map(|(i, iv)| IntervalRow::new(i, b.method, b.divergence.name(), b.rho.value(), iv)),
        );
    }
    Ok(rows)
}

pub fn predict(cfg: &PredictConfig, train: &Path, test: &Path, out: &Path) -> CliResult<PathBuf> {
    require(train)?;
    require(test)?;
    let rows = predict_rows(cfg, &read_table(train)?, &read_table(test)?)?;
    let dir = OutputDir::open(out)?;
    dir.write("intervals.csv", |w| write_records_to(w, &rows))?;
    dir.commit()
}

/// Counterfactual (and optionally ITE) intervals for every target row.
pub fn sensitivity_rows(cfg: &SensitivityConfig, observational: &Table, targets: &Table) -> CliResult<Vec<SensitivityRow>> {
    check_dims(observational, targets)?;
    let data = observational.observational("observational")?;
    let opts = PipelineOptions::default();
    let plan = SplitPlan::new(data.len(), 0, cfg.seed);
    let fit = CounterfactualFit::fit(&data, cfg.t1, None, &opts, &plan)?;
    let arm = if cfg.t1 == 1 { Estimand::Y1 } else { Estimand::Y0 };
    let mut rows = Vec::new();
    for b in &cfg.blocks()? {
        let mut push = |estimand, ivs: &[robust_conformal::PredictionInterval]| {
            rows.extend(ivs.iter().enumerate().map(|(i, iv)| SensitivityRow {
                index: i,
                estimand,
                method: b.method,
                divergence: b.divergence.name().to_string(),
                rho: b.rho.value(),
                lower: iv.lower,
                upper: iv.upper,
                threshold: iv.threshold,
                is_infinite: iv.is_infinite(),
            }));
        };
        push(arm, &fit.intervals(targets.x.view(), cfg.t2, b));
        if cfg.ite {
            let split = cfg.budget_split.map(|[a, c]| (a, c));
            let ivs = ite_intervals(&data, targets.x.view(), cfg.t2, b, split, None, &opts, cfg.seed)?;
            push(Estimand::Ite, &ivs);
        }
    }
    Ok(rows)
}

pub fn sensitivity(cfg: &SensitivityConfig, observational: &Path, targets: &Path, out: &Path) -> CliResult<PathBuf> {
    require(observational)?;
    require(targets)?;
    let rows = sensitivity_rows(cfg, &read_table(observational)?, &read_table(targets)?)?;
    let dir = OutputDir::open(out)?;
    dir.write("intervals.csv", |w| write_records_to(w, &rows))?;
    dir.commit()
}

type CellKey = (Method, String, u64);

/// Cells of `prev` that already hold every run of `cfg`.
fn completed_cells(cfg: &SimConfig, prev: &ExperimentReport) -> CliResult<BTreeSet<CellKey>> {
    let comparable = SimConfig {
        methods: cfg.methods.clone(),
        divergences: cfg.divergences.clone(),
        rho_grid: cfg.rho_grid.clone(),
        ..prev.config.clone()
    };
    if &comparable != cfg {
        return Err(CliError::config(
            "cannot resume: the existing report was produced by a different study configuration",
        ));
    }
    Ok(prev
        .cells
        .iter()
        .filter(|c| c.runs == cfg.n_runs)
        .map(|c| (c.method, c.divergence.clone(), c.rho.to_bits()))
        .collect())
}

/// Runs the study, reusing completed cells of an earlier report when
/// `resume` is set.
pub fn experiment_report(cfg: &SimConfig, previous: Option<&ExperimentReport>) -> CliResult<ExperimentReport> {
    let done = match previous {
        Some(p) => completed_cells(cfg, p)?,
        None => BTreeSet::new(),
    };
    let in_grid = |m: Method, f: &str, r: f64| {
        cfg.methods.contains(&m) && cfg.divergences.iter().any(|d| d.name() == f) && cfg.rho_grid.iter().any(|&g| g.to_bits() == r.to_bits())
    };
    let kept: Vec<_> = previous
        .map(|p| {
            p.runs
                .iter()
                .filter(|r| in_grid(r.method, &r.divergence, r.rho) && done.contains(&(r.method, r.divergence.clone(), r.rho.to_bits())))
                .cloned()
                .collect()
        })
        .unwrap_or_default();
    if !done.is_empty() {
        info!("resume: skipping {} completed cells", done.len());
    }
    let keep = |m: Method, f: &str, r: f64| !done.contains(&(m, f.to_string(), r.to_bits()));
    let fresh = run_experiment_filtered(cfg, &PipelineOptions::default(), keep)?;
    let mut runs = kept;
    runs.extend(fresh.runs);
    Ok(report_from_runs(cfg, runs))
}

pub fn experiment(cfg: &SimConfig, out: &Path, resume: bool) -> CliResult<PathBuf> {
    let json_path = out.join("report.json");
    let previous = if resume && json_path.is_file() {
        let text = std::fs::read_to_string(&json_path).map_err(io)?;
        let prev: ExperimentReport = serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", json_path.display())))?;
        Some(prev)
    } else {
        None
    };
    let report = experiment_report(cfg, previous.as_ref())?;
    let dir = OutputDir::open(out)?;
    dir.write("report.csv", |w| write_records_to(w, &report.cells))?;
    dir.write("runs.csv", |w| write_records_to(w, &report.runs))?;
    dir.write("report.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &report).map_err(|e| CliError::Numerical(e.to_string()))?;
        w.write_all(b"\n").map_err(io)
    })?;
    dir.commit()
}
