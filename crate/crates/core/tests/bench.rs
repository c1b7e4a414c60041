use robust_conformal::bench::{run_experiment, run_experiment_filtered, Scenario, SimConfig, Tilt};
use robust_conformal::conformal::PipelineOptions;
use robust_conformal::{FDivergence, Method};

fn small(scenario: Scenario) -> SimConfig {
    SimConfig {
        scenario,
        d: 10,
        sparsity: 4,
        n_train: 400,
        n_test: 400,
        n_runs: 12,
        rho_grid: vec![0.005, 0.015, 0.025],
        ..SimConfig::default()
    }
}

#[test]
fn reports_are_reproducible() {
    let cfg = small(Scenario::Linear);
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.runs.len(), 12 * Method::ALL.len() * 3);
}

#[test]
fn robust_coverage_is_monotone_in_radius_per_run() {
    let cfg = small(Scenario::Linear);
    let rep = run_experiment_filtered(&cfg, &PipelineOptions::default(), |m, _, _| m == Method::Wrcp).unwrap();
    for run in 0..cfg.n_runs {
        let mut recs: Vec<_> = rep.runs.iter().filter(|r| r.run == run).collect();
        recs.sort_by(|a, b| a.rho.total_cmp(&b.rho));
        for w in recs.windows(2) {
            assert!(w[1].coverage >= w[0].coverage);
            assert!(w[1].length >= w[0].length);
        }
    }
}

#[test]
fn divergence_families_all_report() {
    let cfg = SimConfig {
        divergences: vec![FDivergence::kl(), FDivergence::tv(), FDivergence::chi_sq()],
        n_runs: 4,
        methods: vec![Method::Wrcp],
        ..small(Scenario::Linear)
    };
    let rep = run_experiment(&cfg).unwrap();
    for f in ["kl", "tv", "chisq"] {
        for &rho in &cfg.rho_grid {
            let c = rep.cell(Method::Wrcp, f, rho).unwrap();
            assert!(c.length.is_finite() && c.coverage > 0.0);
        }
    }
}

#[test]
fn conditional_shift_alone_breaks_split_conformal() {
    let cfg = SimConfig {
        n_runs: 20,
        methods: vec![Method::Cp],
        ..small(Scenario::NoXShift)
    };
    let rep = run_experiment(&cfg).unwrap();
    let cp = rep.cell(Method::Cp, "kl", 0.005).unwrap();
    assert!(cp.coverage < 0.9, "{}", cp.coverage);
    assert_eq!(Tilt::default().kl() > 0.0, rep.rho_star > 0.0);
}
