use ndarray::Array2;
use proptest::prelude::*;

use robust_conformal::bench::{CellSummary, RunRecord};
use robust_conformal::{FDivergence, Method};
use wrcp_cli::config::{PredictConfig, WeightMode};
use wrcp_cli::table::{read_records_from, read_table_from, write_records_to, write_table_to, Estimand, IntervalRow, SensitivityRow, Table};
use wrcp_cli::Config;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6f64,
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
    ]
}

fn bound() -> impl Strategy<Value = f64> {
    prop_oneof![4 => finite(), 1 => Just(f64::INFINITY), 1 => Just(f64::NEG_INFINITY)]
}

fn method() -> impl Strategy<Value = Method> {
    prop::sample::select(Method::ALL.to_vec())
}

fn table() -> impl Strategy<Value = Table> {
    (1usize..5, 0usize..12, any::<bool>(), any::<bool>()).prop_flat_map(|(d, n, with_y, with_t)| {
        (
            prop::collection::vec(finite(), n * d),
            prop::collection::vec(finite(), n),
            prop::collection::vec(0u8..2, n),
        )
            .prop_map(move |(xs, y, t)| Table {
                x: Array2::from_shape_vec((n, d), xs).unwrap(),
                y: with_y.then_some(y),
                t: with_t.then_some(t),
            })
    })
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(u, v)| u.to_bits() == v.to_bits())
}

proptest! {
    #[test]
    fn data_tables_round_trip(t in table()) {
        let mut buf = Vec::new();
        write_table_to(&mut buf, &t).unwrap();
        let back = read_table_from(buf.as_slice()).unwrap();
        prop_assert_eq!(back.x.dim(), t.x.dim());
        prop_assert!(same_bits(back.x.as_slice().unwrap(), t.x.as_slice().unwrap()));
        prop_assert_eq!(back.y.is_some(), t.y.is_some());
        if let (Some(a), Some(b)) = (&back.y, &t.y) {
            prop_assert!(same_bits(a, b));
        }
        prop_assert_eq!(back.t, t.t);
    }

    #[test]
    fn interval_rows_round_trip(
        rows in prop::collection::vec(
            (0usize..1000, method(), prop::sample::select(vec!["kl", "tv", "chisq"]), 0.0..1.0f64, 0usize..2, bound(), bound(), bound(), any::<bool>()),
            0..20,
        )
    ) {
        let rows: Vec<IntervalRow> = rows
            .into_iter()
            .map(|(index, method, f, rho, fold, lower, upper, threshold, is_infinite)| IntervalRow {
                index, method, divergence: f.to_string(), rho, fold, lower, upper, threshold, is_infinite,
            })
            .collect();
        let mut buf = Vec::new();
        write_records_to(&mut buf, &rows).unwrap();
        let back: Vec<IntervalRow> = read_records_from(buf.as_slice()).unwrap();
        prop_assert_eq!(back, rows);
    }

    #[test]
    fn sensitivity_rows_round_trip(
        rows in prop::collection::vec(
            (0usize..1000, prop::sample::select(vec![Estimand::Y1, Estimand::Y0, Estimand::Ite]), method(), 0.0..1.0f64, bound(), bound(), bound()),
            0..20,
        )
    ) {
        let rows: Vec<SensitivityRow> = rows
            .into_iter()
            .map(|(index, estimand, method, rho, lower, upper, threshold)| SensitivityRow {
                index, estimand, method, divergence: "kl".into(), rho, lower, upper, threshold,
                is_infinite: threshold.is_infinite(),
            })
            .collect();
        let mut buf = Vec::new();
        write_records_to(&mut buf, &rows).unwrap();
        let back: Vec<SensitivityRow> = read_records_from(buf.as_slice()).unwrap();
        prop_assert_eq!(back, rows);
    }

    #[test]
    fn report_tables_round_trip(
        vals in prop::collection::vec((method(), finite(), finite(), finite(), 0usize..100), 0..10)
    ) {
        let cells: Vec<CellSummary> = vals
            .iter()
            .map(|&(method, a, b, c, runs)| CellSummary {
                method, divergence: "tv".into(), rho: a.abs(), coverage: b, coverage_half_width: c,
                length: a, length_half_width: b, infinite_rate: c, runs,
            })
            .collect();
        let runs: Vec<RunRecord> = vals
            .iter()
            .map(|&(method, a, b, c, run)| RunRecord {
                run, method, divergence: "kl".into(), rho: a.abs(), coverage: b, length: c, infinite_rate: a,
                covered: run, infinite: run / 2, evaluated: 2 * run,
            })
            .collect();
        let mut buf = Vec::new();
        write_records_to(&mut buf, &cells).unwrap();
        prop_assert_eq!(read_records_from::<_, CellSummary>(buf.as_slice()).unwrap(), cells);
        let mut buf = Vec::new();
        write_records_to(&mut buf, &runs).unwrap();
        prop_assert_eq!(read_records_from::<_, RunRecord>(buf.as_slice()).unwrap(), runs);
    }

    #[test]
    fn configs_round_trip(
        methods in prop::collection::vec(method(), 1..5),
        rho in prop::collection::vec(0.0..1.0f64, 1..4),
        alpha in 0.01..0.99f64,
        seed in 0u64..(1 << 62),
        f in prop::sample::select(vec![FDivergence::kl(), FDivergence::tv(), FDivergence::chi_sq()]),
    ) {
        let cfg = Config {
            schema_version: 1,
            simulate: None,
            predict: Some(PredictConfig { methods, divergence: f, rho, alpha, weights: WeightMode::Uniform, seed }),
            sensitivity: None,
            experiment: None,
        };
        prop_assert_eq!(Config::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
