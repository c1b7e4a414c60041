//! k-nearest-neighbor estimate of the conditional score CDF.
//!
//! `m̂(x; t) = #{i ∈ N_k(x) : S_i ≤ t} / k`, where `N_k(x)` holds the `k`
//! stored rows closest to `x` in standardized Euclidean distance. For a fixed
//! `x` this is a right-continuous step function of `t` with jumps at stored
//! scores.

use std::sync::Arc;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{CdfLearner, ConditionalCdf, Standardizer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnCdf {
    /// Neighbor count; `None` means `⌈√n⌉`.
    pub k: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct KnnCdfModel {
    std: Standardizer,
    /// Standardized rows, row-major.
    points: Vec<f64>,
    scores: Vec<f64>,
    k: usize,
}

impl KnnCdfModel {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Scores of the `k` nearest stored rows, ascending.
    pub fn neighbor_scores(&self, x: ArrayView1<'_, f64>) -> Vec<f64> {
        let d = self.std.dim();
        let mut q = vec![0.0; d];
        self.std.transform_into(x, &mut q);
        let mut dist: Vec<(f64, usize)> = self
            .points
            .chunks_exact(d.max(1))
            .take(self.scores.len())
            .enumerate()
            .map(|(i, p)| {
                let dd = if d == 0 {
                    0.0
                } else {
                    p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                };
                (dd, i)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, cmp);
            dist.truncate(self.k);
        }
        let mut out: Vec<f64> = dist.iter().map(|&(_, i)| self.scores[i]).collect();
        out.sort_by(f64::total_cmp);
        out
    }
}

impl ConditionalCdf for KnnCdfModel {
    fn cdf(&self, x: ArrayView1<'_, f64>, t: f64) -> f64 {
        let nb = self.neighbor_scores(x);
        nb.partition_point(|&s| s <= t) as f64 / self.k as f64
    }

    fn cdf_on_grid(&self, x: ArrayView1<'_, f64>, grid: &[f64]) -> Vec<f64> {
        let nb = self.neighbor_scores(x);
        let k = self.k as f64;
        let mut j = 0;
        grid.iter()
            .map(|&t| {
                while j < nb.len() && nb[j] <= t {
                    j += 1;
                }
                j as f64 / k
            })
            .collect()
    }
}

impl KnnCdf {
    pub fn fit_model(&self, x: ArrayView2<'_, f64>, scores: &[f64]) -> Result<KnnCdfModel> {
        let n = x.nrows();
        if n == 0 || scores.len() != n {
            return Err(Error::invalid("conditional CDF needs matching nonempty covariates and scores"));
        }
        let k = self.k.unwrap_or_else(|| (n as f64).sqrt().ceil() as usize);
        if k == 0 {
            return Err(Error::invalid("neighbor count must be positive"));
        }
        if k > n {
            return Err(Error::invalid(format!("neighbor count {k} exceeds {n} stored rows")));
        }
        let std = Standardizer::fit(x);
        let d = x.ncols();
        let mut points = vec![0.0; n * d.max(1)];
        for (i, row) in x.rows().into_iter().enumerate() {
            std.transform_into(row, &mut points[i * d.max(1)..i * d.max(1) + d]);
        }
        Ok(KnnCdfModel {
            std,
            points,
            scores: scores.to_vec(),
            k,
        })
    }
}

impl CdfLearner for KnnCdf {
    fn fit(&self, x: ArrayView2<'_, f64>, scores: &[f64]) -> Result<Arc<dyn ConditionalCdf>> {
        Ok(Arc::new(self.fit_model(x, scores)?))
    }
}

/// k-NN conditional CDF with explicit `k`.
pub fn fit_conditional_cdf(x: ArrayView2<'_, f64>, scores: &[f64], k: usize) -> Result<KnnCdfModel> {
    KnnCdf { k: Some(k) }.fit_model(x, scores)
}
