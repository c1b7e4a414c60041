use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use robust_conformal::conformal::PipelineOptions;
use robust_conformal::sensitivity::{counterfactual_intervals, ite_intervals, ConfoundedDesign, SensitivityTarget, TargetPopulation};
use robust_conformal::{FDivergence, Method, MethodConfig, PredictionInterval, RobustLevel};

const SEEDS: u64 = 30;

fn cfg(rho: f64) -> MethodConfig {
    MethodConfig::new(Method::Wrcp, FDivergence::kl(), RobustLevel::new(rho).unwrap(), 0.1).unwrap()
}

/// Mean coverage of `truth` over test rows whose arm matches `t2`.
fn study<F>(design: &ConfoundedDesign, t2: TargetPopulation, mut intervals: F, truth: fn(&robust_conformal::sensitivity::ConfoundedSample, usize) -> f64) -> f64
where
    F: FnMut(&robust_conformal::ObservationalData, ndarray::ArrayView2<'_, f64>, u64) -> Vec<PredictionInterval>,
{
    let mut total = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = design.sample(1000, &mut rng).unwrap();
        let test = design.sample(2000, &mut rng).unwrap();
        let keep: Vec<usize> = (0..2000)
            .filter(|&i| t2.arm().is_none_or(|a| test.data.t()[i] == a))
            .collect();
        let tx = test.data.x().select(ndarray::Axis(0), &keep);
        let ivs = intervals(&obs.data, tx.view(), seed);
        let hits = keep.iter().zip(&ivs).filter(|(&i, iv)| iv.contains(truth(&test, i))).count();
        total += hits as f64 / keep.len() as f64;
    }
    total / SEEDS as f64
}

fn treated_outcome(s: &robust_conformal::sensitivity::ConfoundedSample, i: usize) -> f64 {
    s.y1[i]
}

fn effect(s: &robust_conformal::sensitivity::ConfoundedSample, i: usize) -> f64 {
    s.y1[i] - s.y0[i]
}

fn y1_coverage(design: &ConfoundedDesign, t2: TargetPopulation, rho: f64) -> f64 {
    let target = SensitivityTarget::new(1, t2).unwrap();
    let opts = PipelineOptions::default();
    study(
        design,
        t2,
        |d, x, seed| counterfactual_intervals(d, x, target, &cfg(rho), None, &opts, seed).unwrap(),
        treated_outcome,
    )
}

#[test]
fn randomized_trial_reduces_to_weighted_conformal() {
    let design = ConfoundedDesign::randomized(2);
    let cov = y1_coverage(&design, TargetPopulation::Whole, 0.0);
    assert!((cov - 0.9).abs() <= 0.03, "{cov}");
}

#[test]
fn confounded_coverage_at_true_radius() {
    let design = ConfoundedDesign::default();
    let rho = design.rho_star(1);
    assert!((rho - 0.0887).abs() < 5e-4);
    let cov = y1_coverage(&design, TargetPopulation::Control, rho);
    assert!(cov >= 0.87, "{cov}");
}

#[test]
fn ignoring_confounding_undercovers() {
    let design = ConfoundedDesign::default();
    let cov = y1_coverage(&design, TargetPopulation::Control, 0.0);
    assert!(cov < 0.9, "{cov}");
}

#[test]
fn effect_intervals_cover_at_true_radius() {
    let design = ConfoundedDesign::default();
    let rho = design.rho_star(1);
    let opts = PipelineOptions::default();
    let cov = study(
        &design,
        TargetPopulation::Control,
        |d, x, seed| ite_intervals(d, x, TargetPopulation::Control, &cfg(rho), None, None, &opts, seed).unwrap(),
        effect,
    );
    assert!(cov >= 0.87, "{cov}");
}
