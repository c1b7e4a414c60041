//! Run configuration.
//!
//! One TOML file holds `schema_version` plus one table per subcommand. Every
//! key inside a table is required unless marked optional below, and unknown
//! keys are rejected.
//!
//! ```toml
//! schema_version = 1
//!
//! [simulate]
//! scenario = "linear"      # linear | no_x_shift | no_cond_shift | nonlinear
//! d = 50
//! sparsity = 10
//! coef = 0.47
//! eta = 0.5
//! tilt = { c_in = 0.96, c_out = 1.59, tau = 1.86 }
//! n_source = 500
//! n_target = 500
//! seed = 2024
//!
//! [predict]
//! methods = ["cp", "wcp", "rcp", "wrcp", "dwrcp"]
//! divergence = "kl"        # kl | tv | chisq
//! rho = [0.005, 0.01]
//! alpha = 0.1
//! weights = "estimated"    # estimated | uniform
//! seed = 7
//!
//! [sensitivity]
//! t1 = 1
//! t2 = "control"           # treated | control | whole
//! method = "wrcp"          # cp | wcp | rcp | wrcp
//! divergence = "kl"
//! rho = [0.0, 0.09]
//! alpha = 0.1
//! ite = false
//! budget_split = [0.05, 0.05]   # optional
//! seed = 7
//!
//! [experiment]             # every field of the benchmark study
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use robust_conformal::bench::{Scenario, SimConfig, Tilt};
use robust_conformal::sensitivity::TargetPopulation;
use robust_conformal::{FDivergence, Method, MethodConfig, RobustLevel};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub simulate: Option<SimulateConfig>,
    pub predict: Option<PredictConfig>,
    pub sensitivity: Option<SensitivityConfig>,
    pub experiment: Option<SimConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenario: Scenario,
    pub d: usize,
    pub sparsity: usize,
    pub coef: f64,
    pub eta: f64,
    pub tilt: Tilt,
    pub n_source: usize,
    pub n_target: usize,
    pub seed: u64,
}

impl SimulateConfig {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            scenario: self.scenario,
            d: self.d,
            sparsity: self.sparsity,
            coef: self.coef,
            eta: self.eta,
            tilt: self.tilt,
            n_train: self.n_source,
            n_test: self.n_target,
            seed: self.seed,
            ..SimConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    Estimated,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub methods: Vec<Method>,
    pub divergence: FDivergence,
    pub rho: Vec<f64>,
    pub alpha: f64,
    pub weights: WeightMode,
    pub seed: u64,
}

impl PredictConfig {
    /// Every `(method, ρ)` block to emit. Non-robust methods get one block
    /// at `ρ = 0`.
    pub fn blocks(&self) -> CliResult<Vec<MethodConfig>> {
        let mut out = Vec::new();
        for &m in &self.methods {
            let rhos: &[f64] = if m.is_robust() { &self.rho } else { &[0.0] };
            for &r in rhos {
                out.push(method_config(m, &self.divergence, r, self.alpha)?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityConfig {
    pub t1: u8,
    pub t2: TargetPopulation,
    pub method: Method,
    pub divergence: FDivergence,
    pub rho: Vec<f64>,
    pub alpha: f64,
    pub ite: bool,
    pub budget_split: Option<[f64; 2]>,
    pub seed: u64,
}

impl SensitivityConfig {
    pub fn blocks(&self) -> CliResult<Vec<MethodConfig>> {
        self.rho
            .iter()
            .map(|&r| method_config(self.method, &self.divergence, r, self.alpha))
            .collect()
    }
}

fn method_config(method: Method, f: &FDivergence, rho: f64, alpha: f64) -> CliResult<MethodConfig> {
    let level = RobustLevel::new(rho).map_err(|e| CliError::config(e.to_string()))?;
    MethodConfig::new(method, f.clone(), level, alpha).map_err(|e| CliError::config(e.to_string()))
}

impl Config {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    fn validate(&self) -> CliResult<()> {
        let invalid = |e: robust_conformal::Error| CliError::config(e.to_string());
        if let Some(s) = &self.simulate {
            s.sim_config().validate().map_err(invalid)?;
        }
        if let Some(p) = &self.predict {
            if p.methods.is_empty() || p.rho.is_empty() {
                return Err(CliError::config("predict: methods and rho must be nonempty"));
            }
            p.blocks()?;
        }
        if let Some(s) = &self.sensitivity {
            if s.t1 > 1 {
                return Err(CliError::config(format!("sensitivity: t1 must be 0 or 1, got {}", s.t1)));
            }
            if s.method == Method::Dwrcp {
                return Err(CliError::config("sensitivity: method must be one of cp, wcp, rcp, wrcp"));
            }
            if s.rho.is_empty() {
                return Err(CliError::config("sensitivity: rho must be nonempty"));
            }
            s.blocks()?;
            if let Some([a, b]) = s.budget_split {
                robust_conformal::sensitivity::ite_budget(s.alpha, Some((a, b))).map_err(invalid)?;
            }
        }
        if let Some(e) = &self.experiment {
            e.validate().map_err(invalid)?;
        }
        Ok(())
    }

    pub fn override_seed(&mut self, seed: u64) {
        if let Some(s) = &mut self.simulate {
            s.seed = seed;
        }
        if let Some(p) = &mut self.predict {
            p.seed = seed;
        }
        if let Some(s) = &mut self.sensitivity {
            s.seed = seed;
        }
        if let Some(e) = &mut self.experiment {
            e.seed = seed;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PREDICT: &str = r#"
schema_version = 1
[predict]
methods = ["cp", "wrcp"]
divergence = "kl"
rho = [0.01, 0.02]
alpha = 0.1
weights = "estimated"
seed = 3
"#;

    #[test]
    fn parses_and_expands_blocks() {
        let cfg = Config::from_toml(PREDICT).unwrap();
        let blocks = cfg.predict.unwrap().blocks().unwrap();
        let got: Vec<_> = blocks.iter().map(|b| (b.method, b.rho.value())).collect();
        assert_eq!(got, vec![(Method::Cp, 0.0), (Method::Wrcp, 0.01), (Method::Wrcp, 0.02)]);
    }

    #[test]
    fn missing_key_is_named() {
        let text = PREDICT.replace("alpha = 0.1\n", "");
        let err = Config::from_toml(&text).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        assert!(err.to_string().contains("alpha"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let text = PREDICT.replace("seed = 3", "seed = 3\nsede = 4");
        assert!(Config::from_toml(&text).unwrap_err().to_string().contains("sede"));
    }

    #[test]
    fn unknown_method_lists_valid_ones() {
        let text = PREDICT.replace("\"wrcp\"]", "\"wrcpp\"]");
        let msg = Config::from_toml(&text).unwrap_err().to_string();
        for m in Method::ALL {
            assert!(msg.contains(m.as_str()), "{msg}");
        }
    }

    #[test]
    fn schema_version_checked() {
        let text = PREDICT.replace("schema_version = 1", "schema_version = 9");
        assert!(Config::from_toml(&text).unwrap_err().to_string().contains("schema_version"));
    }

    #[test]
    fn bad_alpha_is_config_error() {
        let err = Config::from_toml(&PREDICT.replace("alpha = 0.1", "alpha = 1.5")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = Config {
            schema_version: 1,
            experiment: Some(SimConfig::default()),
            ..Config::from_toml(PREDICT).unwrap()
        };
        assert_eq!(Config::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn seed_override_reaches_every_section() {
        let mut cfg = Config {
            experiment: Some(SimConfig::default()),
            ..Config::from_toml(PREDICT).unwrap()
        };
        cfg.override_seed(99);
        assert_eq!(cfg.predict.unwrap().seed, 99);
        assert_eq!(cfg.experiment.unwrap().seed, 99);
    }
}
