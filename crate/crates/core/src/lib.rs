//! Robust conformal prediction under decomposed distribution shift.
//!
//! Prediction intervals here stay valid when the target population differs
//! from the training population in two ways at once:
//!
//! - a covariate shift `w(x) = dQ_X/dP_X(x)`, which is estimated from
//!   unlabeled target covariates and corrected by reweighting calibration
//!   scores, and
//! - a conditional shift of `Y | X` whose f-divergence from the training
//!   conditional is at most `rho`, which is absorbed by calibrating at the
//!   inflated level `g⁻¹_{f,ρ}(1 − α)`.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`divergence`] | f-divergence generators and the level maps `g`, `g⁻¹` |
//! | [`quantile`] | weighted quantiles of score sets with an infinity atom |
//! | [`estimators`] | lasso, logistic density ratio, k-NN conditional CDF, propensity |
//! | [`conformal`] | split CP / WCP / RCP / WRCP |
//! | [`debiased`] | doubly robust D-WRCP with monotonized coverage curves |
//! | [`sensitivity`] | counterfactual and ITE intervals under the f-sensitivity model |
//! | [`bench`] | simulation scenarios, metrics and the experiment runner |

pub mod bench;
pub mod conformal;
pub mod data;
pub mod debiased;
pub mod divergence;
pub mod error;
pub mod estimators;
pub mod quantile;
pub mod sensitivity;

pub use conformal::{Method, MethodConfig, PredictionInterval, SplitPlan};
pub use data::{Dataset, ObservationalData};
pub use divergence::{DivergenceKind, FDivergence, RobustLevel};
pub use error::{Error, Result};
pub use quantile::ScoreSet;
