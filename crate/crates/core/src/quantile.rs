//! Quantiles of discrete score distributions carrying an atom at `+∞`.
//!
//! The quantile at level `β` is the smallest atom `t` whose cumulative mass
//! `Σ_{S_i ≤ t} w_i` reaches `β` of the total. Equal scores are merged
//! before thresholding, and a level sitting exactly on a cumulative boundary
//! resolves to that boundary's score. When the finite atoms never reach the
//! level, the answer is `+∞`.
//!
//! Masses are compared in the caller's scale (`cum ≥ β · total`), so integer
//! weights reproduce the `⌈nβ⌉`-th order statistic without rounding drift.

use crate::error::{Error, Result};

/// Calibration scores with relative masses and a mass on `+∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    scores: Vec<f64>,
    weights: Vec<f64>,
    inf_mass: f64,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, weights: Vec<f64>, inf_mass: f64) -> Result<Self> {
        if scores.len() != weights.len() {
            return Err(Error::invalid("scores and weights differ in length"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("scores must be finite"));
        }
        if weights.iter().chain(std::iter::once(&inf_mass)).any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum::<f64>() + inf_mass;
        if total <= 0.0 {
            return Err(Error::DegenerateWeights);
        }
        Ok(Self {
            scores,
            weights,
            inf_mass,
        })
    }

    /// Set built from raw likelihood-ratio weights. Masses are kept in the
    /// raw scale; quantiles only depend on their ratios.
    pub fn from_raw(scores: Vec<f64>, raw_weights: &[f64], test_weight: f64) -> Result<Self> {
        normalize_weights(raw_weights, test_weight)?;
        Self::new(scores, raw_weights.to_vec(), test_weight)
    }

    /// Uniform unit masses on each score and on `+∞`.
    pub fn exchangeable(scores: Vec<f64>) -> Result<Self> {
        let n = scores.len();
        Self::new(scores, vec![1.0; n], 1.0)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn inf_mass(&self) -> f64 {
        self.inf_mass
    }

    /// Probability masses summing to one.
    pub fn normalized(&self) -> (Vec<f64>, f64) {
        let total: f64 = self.weights.iter().sum::<f64>() + self.inf_mass;
        (
            self.weights.iter().map(|w| w / total).collect(),
            self.inf_mass / total,
        )
    }

    pub fn quantile(&self, level: f64) -> f64 {
        SortedScores::new(&self.scores, &self.weights).quantile(level, self.inf_mass)
    }
}

/// `p_i = w_i / (Σ w_j + w_test)` and `p_{n+1} = w_test / (Σ w_j + w_test)`.
pub fn normalize_weights(raw_weights: &[f64], test_weight: f64) -> Result<(Vec<f64>, f64)> {
    if raw_weights
        .iter()
        .chain(std::iter::once(&test_weight))
        .any(|w| !(w.is_finite() && *w >= 0.0))
    {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    let total: f64 = raw_weights.iter().sum::<f64>() + test_weight;
    if total <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    Ok((raw_weights.iter().map(|w| w / total).collect(), test_weight / total))
}

pub fn weighted_quantile(level: f64, set: &ScoreSet) -> f64 {
    set.quantile(level)
}

/// Split-conformal quantile: the `⌈(n+1)β⌉`-th smallest of `scores ∪ {+∞}`.
pub fn conformal_quantile(level: f64, scores: &[f64]) -> f64 {
    let n = scores.len();
    let rank = (level * (n + 1) as f64).ceil();
    if n == 0 || rank > n as f64 {
        return f64::INFINITY;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = (rank as usize).max(1);
    sorted[k - 1]
}

/// Calibration scores sorted once with prefix sums of their masses; answers
/// quantile queries for any mass on the `+∞` atom in `O(log n)`.
#[derive(Debug, Clone)]
pub struct SortedScores {
    values: Vec<f64>,
    cumulative: Vec<f64>,
}

impl SortedScores {
    pub fn new(scores: &[f64], weights: &[f64]) -> Self {
        debug_assert_eq!(scores.len(), weights.len());
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        let mut values: Vec<f64> = Vec::with_capacity(scores.len());
        let mut cumulative: Vec<f64> = Vec::with_capacity(scores.len());
        let mut acc = 0.0;
        for i in order {
            acc += weights[i];
            match values.last() {
                Some(&last) if last == scores[i] => *cumulative.last_mut().unwrap() = acc,
                _ => {
                    values.push(scores[i]);
                    cumulative.push(acc);
                }
            }
        }
        Self { values, cumulative }
    }

    pub fn finite_mass(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn quantile(&self, level: f64, inf_mass: f64) -> f64 {
        let target = level * (self.finite_mass() + inf_mass);
        let idx = self.cumulative.partition_point(|&c| c < target);
        self.values.get(idx).copied().unwrap_or(f64::INFINITY)
    }
}
