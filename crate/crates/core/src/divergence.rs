//! f-divergence generators and the worst-case level maps.
//!
//! For a generator `f` (convex, `f(1) = 0`) and radius `rho`, the map
//!
//! ```text
//! g(β) = inf { z ∈ [0,1] : β f(z/β) + (1-β) f((1-z)/(1-β)) ≤ ρ }
//! ```
//!
//! is the smallest coverage a target conditional law within `rho` can have
//! when the source coverage is `β`. Its generalized inverse
//! `g⁻¹(τ) = sup { β : g(β) ≤ τ }` is the inflated calibration level.
//! Both are computed by bisection; `g` is nondecreasing in `β` and
//! nonincreasing in `rho`.
//!
//! Boundary terms follow the perspective convention
//! `0 · f(a/0) = a · lim_{t→∞} f(t)/t`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on `z` and `β` for both bisections.
pub const BISECTION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivergenceKind {
    Kl,
    Tv,
    ChiSq,
    Custom,
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DivergenceKind::Kl => "kl",
            DivergenceKind::Tv => "tv",
            DivergenceKind::ChiSq => "chisq",
            DivergenceKind::Custom => "custom",
        };
        f.write_str(s)
    }
}

type Generator = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// An f-divergence generator together with its two limits at the boundary.
#[derive(Clone)]
pub struct FDivergence {
    kind: DivergenceKind,
    name: String,
    f: Generator,
    f_at_zero: f64,
    recession_slope: f64,
}

impl fmt::Debug for FDivergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FDivergence")
            .field("name", &self.name)
            .field("f_at_zero", &self.f_at_zero)
            .field("recession_slope", &self.recession_slope)
            .finish()
    }
}

impl PartialEq for FDivergence {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.name == other.name
            && self.kind != DivergenceKind::Custom
    }
}

impl FDivergence {
    /// Kullback-Leibler, `f(t) = t log t`.
    pub fn kl() -> Self {
        Self {
            kind: DivergenceKind::Kl,
            name: "kl".into(),
            f: Arc::new(|t: f64| if t == 0.0 { 0.0 } else { t * t.ln() }),
            f_at_zero: 0.0,
            recession_slope: f64::INFINITY,
        }
    }

    /// Total variation, `f(t) = |t - 1| / 2`.
    pub fn tv() -> Self {
        Self {
            kind: DivergenceKind::Tv,
            name: "tv".into(),
            f: Arc::new(|t: f64| 0.5 * (t - 1.0).abs()),
            f_at_zero: 0.5,
            recession_slope: 0.5,
        }
    }

    /// Pearson chi-squared, `f(t) = (t - 1)^2`.
    pub fn chi_sq() -> Self {
        Self {
            kind: DivergenceKind::ChiSq,
            name: "chisq".into(),
            f: Arc::new(|t: f64| (t - 1.0) * (t - 1.0)),
            f_at_zero: 1.0,
            recession_slope: f64::INFINITY,
        }
    }

    /// A user generator. The two boundary limits must be supplied; they are
    /// not derived from `f`.
    pub fn custom<F>(name: impl Into<String>, f: F, f_at_zero: f64, recession_slope: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let one = f(1.0);
        if one != 0.0 {
            return Err(Error::invalid(format!("generator must satisfy f(1) = 0, got {one}")));
        }
        if f_at_zero.is_nan() || recession_slope.is_nan() {
            return Err(Error::invalid("boundary limits must not be NaN"));
        }
        Ok(Self {
            kind: DivergenceKind::Custom,
            name: name.into(),
            f: Arc::new(f),
            f_at_zero,
            recession_slope,
        })
    }

    pub fn kind(&self) -> DivergenceKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn f_at_zero(&self) -> f64 {
        self.f_at_zero
    }

    pub fn recession_slope(&self) -> f64 {
        self.recession_slope
    }

    /// Evaluates the generator on `(0, ∞)`; `t = 0` returns the stored limit.
    pub fn eval(&self, t: f64) -> f64 {
        if t == 0.0 {
            self.f_at_zero
        } else {
            (self.f)(t)
        }
    }

    /// `c · f(a / c)` with the perspective convention at `c = 0`.
    fn perspective_term(&self, c: f64, a: f64) -> f64 {
        if c == 0.0 {
            if a == 0.0 {
                0.0
            } else {
                a * self.recession_slope
            }
        } else if a == 0.0 {
            c * self.f_at_zero
        } else {
            c * (self.f)(a / c)
        }
    }

    /// Divergence between `Bernoulli(z)` and `Bernoulli(β)`:
    /// `β f(z/β) + (1-β) f((1-z)/(1-β))`. May be `+∞`.
    pub fn eval_perspective(&self, beta: f64, z: f64) -> f64 {
        let v = self.perspective_term(beta, z) + self.perspective_term(1.0 - beta, 1.0 - z);
        // rounding can leave tiny negatives near z = β
        v.max(0.0)
    }

    /// Smallest target coverage compatible with source coverage `beta`.
    pub fn g_value(&self, rho: RobustLevel, beta: f64) -> f64 {
        let beta = beta.clamp(0.0, 1.0);
        let rho = rho.value();
        if rho == 0.0 {
            return beta;
        }
        if beta == 0.0 {
            return 0.0;
        }
        if rho.is_infinite() && beta < 1.0 {
            return 0.0;
        }
        if self.eval_perspective(beta, 0.0) <= rho {
            return 0.0;
        }
        // h(z) is nonincreasing on [0, β] with h(β) = 0
        let (mut lo, mut hi) = (0.0_f64, beta);
        while hi - lo > BISECTION_TOL {
            let mid = 0.5 * (lo + hi);
            if self.eval_perspective(beta, mid) <= rho {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Largest source level whose worst-case target coverage is at most `tau`.
    pub fn g_inverse(&self, rho: RobustLevel, tau: f64) -> f64 {
        let tau = tau.clamp(0.0, 1.0);
        if rho.value() == 0.0 {
            return tau;
        }
        if self.g_value(rho, 1.0) <= tau {
            return 1.0;
        }
        // g(β) ≤ β, so β = τ is always feasible
        let (mut lo, mut hi) = (tau, 1.0_f64);
        while hi - lo > BISECTION_TOL {
            let mid = 0.5 * (lo + hi);
            if self.g_value(rho, mid) <= tau {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Whether `g(1) ≥ 1 - α`, in which case the calibrated interval keeps
    /// exact `1 - α` coverage instead of `g(g⁻¹(1 - α))`.
    pub fn g_condition_check(&self, rho: RobustLevel, alpha: f64) -> bool {
        self.g_value(rho, 1.0) >= 1.0 - alpha
    }

    /// `β₀(ρ) = sup { β : g(β) = 0 }`, bracketed by bisection.
    pub fn zero_region_edge(&self, rho: RobustLevel) -> f64 {
        if rho.value() == 0.0 {
            return 0.0;
        }
        if self.g_value(rho, 1.0) == 0.0 {
            return 1.0;
        }
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        while hi - lo > BISECTION_TOL {
            let mid = 0.5 * (lo + hi);
            if self.g_value(rho, mid) == 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

impl FromStr for FDivergence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kl" => Ok(Self::kl()),
            "tv" => Ok(Self::tv()),
            "chisq" | "chi2" | "chi_sq" => Ok(Self::chi_sq()),
            other => Err(Error::invalid(format!(
                "unknown divergence `{other}` (expected one of: kl, tv, chisq)"
            ))),
        }
    }
}

impl Serialize for FDivergence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name)
    }
}

impl<'de> Deserialize<'de> for FDivergence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Radius of the conditional-shift ball. `0` means no conditional shift.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RobustLevel(f64);

impl RobustLevel {
    pub const ZERO: RobustLevel = RobustLevel(0.0);

    pub fn new(rho: f64) -> Result<Self> {
        if rho.is_nan() || rho < 0.0 {
            return Err(Error::invalid(format!("robust level must be nonnegative, got {rho}")));
        }
        Ok(Self(rho))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for RobustLevel {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<RobustLevel> for f64 {
    fn from(r: RobustLevel) -> f64 {
        r.0
    }
}
