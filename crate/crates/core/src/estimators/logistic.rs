//! Logistic regression by accelerated gradient descent, and the two models
//! built on it: classifier-odds density ratios and propensity scores.
//!
//! For membership labels `A = 0` (source) and `A = 1` (target), Bayes' rule
//! gives `P(A=1|x) / P(A=0|x) = w(x) · P(A=1) / P(A=0)`, so the fitted odds
//! rescaled by `n_source / n_target` estimate `w(x) = dQ_X/dP_X(x)`.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{DensityRatio, PropensityLearner, PropensityModel, RatioLearner, Standardizer};
use crate::error::{Error, Result};

/// Gradient-descent settings shared by both logistic models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticSettings {
    /// Ridge penalty on the slopes (the intercept is unpenalized), on the
    /// mean-log-loss scale.
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the gradient's Euclidean norm falls below this.
    pub tol: f64,
}

impl Default for LogisticSettings {
    fn default() -> Self {
        Self {
            l2: 1e-2,
            max_iter: 5000,
            tol: 1e-6,
        }
    }
}

/// Fitted linear logit on standardized covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    std: Standardizer,
    coef: Array1<f64>,
    intercept: f64,
    /// The fitted classifier labels every training row correctly.
    separated: bool,
}

impl LogisticFit {
    pub fn logit(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.intercept + self.coef.dot(&self.std.transform_row(x))
    }

    pub fn probability(&self, x: ArrayView1<'_, f64>) -> f64 {
        sigmoid(self.logit(x))
    }

    pub fn separated(&self) -> bool {
        self.separated
    }

    /// Slopes mapped back to original covariate units.
    pub fn raw_coefficients(&self) -> Array1<f64> {
        &self.coef / self.std.scale()
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Largest eigenvalue of `zᵀz / n` for the intercept-augmented design, by
/// power iteration.
fn gram_spectral_norm(z: &Array2<f64>) -> f64 {
    let n = z.nrows() as f64;
    let d = z.ncols();
    let mut v = Array1::from_elem(d + 1, 1.0 / ((d + 1) as f64).sqrt());
    let mut lam = 1.0;
    for _ in 0..50 {
        let zv = z.dot(&v.slice(ndarray::s![..d])) + v[d];
        let mut next = Array1::zeros(d + 1);
        next.slice_mut(ndarray::s![..d]).assign(&(z.t().dot(&zv) / n));
        next[d] = zv.sum() / n;
        let norm = next.dot(&next).sqrt();
        if norm == 0.0 {
            break;
        }
        lam = norm;
        v = next / norm;
    }
    lam
}

/// Logistic regression of `labels ∈ {0, 1}` on the rows of `x`.
pub fn fit_logistic(x: ArrayView2<'_, f64>, labels: &[f64], settings: &LogisticSettings) -> Result<LogisticFit> {
    let n = x.nrows();
    if n == 0 || labels.len() != n {
        return Err(Error::invalid("logistic regression needs matching nonempty rows and labels"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite covariate in classifier data"));
    }
    let std = Standardizer::fit(x);
    let z = (&x - &std.mean().view().insert_axis(Axis(0))) / std.scale().view().insert_axis(Axis(0));
    let y = Array1::from_vec(labels.to_vec());
    let nf = n as f64;
    let d = x.ncols();

    let lipschitz = 0.25 * gram_spectral_norm(&z) * 1.05 + settings.l2;
    let step = 1.0 / lipschitz;

    let gradient = |coef: &Array1<f64>, b0: f64| -> (Array1<f64>, f64) {
        let eta = z.dot(coef) + b0;
        let resid = eta.mapv(sigmoid) - &y;
        let g = z.t().dot(&resid) / nf + coef * settings.l2;
        (g, resid.sum() / nf)
    };

    // Nesterov momentum with gradient-based restart
    let mut coef = Array1::<f64>::zeros(d);
    let mut b0 = 0.0;
    let mut look = coef.clone();
    let mut look_b0 = b0;
    let mut t = 1.0_f64;
    for _ in 0..settings.max_iter {
        let (g, gb) = gradient(&look, look_b0);
        let gnorm = (g.dot(&g) + gb * gb).sqrt();
        if gnorm < settings.tol {
            coef = look;
            b0 = look_b0;
            break;
        }
        let next = &look - &(&g * step);
        let next_b0 = look_b0 - step * gb;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        let moved_back = (&next - &coef).dot(&g) + (next_b0 - b0) * gb > 0.0;
        if moved_back {
            t = 1.0;
            look = next.clone();
            look_b0 = next_b0;
        } else {
            look = &next + &((&next - &coef) * momentum);
            look_b0 = next_b0 + momentum * (next_b0 - b0);
            t = t_next;
        }
        coef = next;
        b0 = next_b0;
    }

    let eta = z.dot(&coef) + b0;
    let separated = eta.iter().zip(labels).all(|(e, &l)| (*e > 0.0) == (l > 0.5));
    Ok(LogisticFit {
        std,
        coef,
        intercept: b0,
        separated,
    })
}

/// Classifier-odds estimate of `dQ_X/dP_X`, clipped to `[w_lo, w_hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityRatioModel {
    fit: LogisticFit,
    /// `log(n_source / n_target)`, removing the class-size factor from the odds.
    log_prior_correction: f64,
    w_lo: f64,
    w_hi: f64,
}

impl DensityRatioModel {
    pub fn classifier(&self) -> &LogisticFit {
        &self.fit
    }

    pub fn clip_bounds(&self) -> (f64, f64) {
        (self.w_lo, self.w_hi)
    }

    /// Set when the membership classifier separates source from target
    /// perfectly; the ratio is then driven to its clip bounds.
    pub fn separated(&self) -> bool {
        self.fit.separated
    }

    /// Unclipped `log ŵ(x)`.
    pub fn log_ratio(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.fit.logit(x) + self.log_prior_correction
    }
}

impl DensityRatio for DensityRatioModel {
    fn ratio(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.log_ratio(x).exp().clamp(self.w_lo, self.w_hi)
    }
}

/// Learner for [`DensityRatioModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticRatio {
    pub w_lo: f64,
    pub w_hi: f64,
    #[serde(flatten)]
    pub settings: LogisticSettings,
}

impl Default for LogisticRatio {
    fn default() -> Self {
        Self {
            w_lo: 1e-3,
            w_hi: 1e3,
            settings: LogisticSettings::default(),
        }
    }
}

impl LogisticRatio {
    pub fn fit_model(&self, source: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<DensityRatioModel> {
        if source.nrows() == 0 || target.nrows() == 0 {
            return Err(Error::invalid("density ratio needs nonempty source and target samples"));
        }
        if source.ncols() != target.ncols() {
            return Err(Error::invalid("source and target covariates differ in dimension"));
        }
        if !(self.w_lo > 0.0 && self.w_lo <= self.w_hi && self.w_hi.is_finite()) {
            return Err(Error::invalid("clip bounds must satisfy 0 < w_lo <= w_hi < inf"));
        }
        let pooled = ndarray::concatenate(Axis(0), &[source, target]).expect("matching columns");
        let mut labels = vec![0.0; source.nrows()];
        labels.resize(source.nrows() + target.nrows(), 1.0);
        let fit = fit_logistic(pooled.view(), &labels, &self.settings)?;
        if fit.separated {
            log::warn!("membership classifier separates source and target; density ratios will sit at the clip bounds");
        }
        Ok(DensityRatioModel {
            fit,
            log_prior_correction: (source.nrows() as f64 / target.nrows() as f64).ln(),
            w_lo: self.w_lo,
            w_hi: self.w_hi,
        })
    }
}

impl RatioLearner for LogisticRatio {
    fn fit(&self, source: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<Arc<dyn DensityRatio>> {
        Ok(Arc::new(self.fit_model(source, target)?))
    }
}

pub fn fit_density_ratio(source: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<DensityRatioModel> {
    LogisticRatio::default().fit_model(source, target)
}

/// Logistic propensity `ê(x)` clipped to `[ε, 1 − ε]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityFit {
    fit: LogisticFit,
    eps: f64,
}

impl PropensityFit {
    pub fn classifier(&self) -> &LogisticFit {
        &self.fit
    }
}

impl PropensityModel for PropensityFit {
    fn propensity(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.fit.probability(x).clamp(self.eps, 1.0 - self.eps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticPropensity {
    pub eps: f64,
    #[serde(flatten)]
    pub settings: LogisticSettings,
}

impl Default for LogisticPropensity {
    fn default() -> Self {
        Self {
            eps: 0.01,
            settings: LogisticSettings::default(),
        }
    }
}

impl LogisticPropensity {
    pub fn fit_model(&self, x: ArrayView2<'_, f64>, treatment: &[u8]) -> Result<PropensityFit> {
        if x.nrows() == 0 || treatment.len() != x.nrows() {
            return Err(Error::invalid("propensity needs matching nonempty covariates and treatments"));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::invalid("propensity clip must lie in (0, 0.5)"));
        }
        let treated = treatment.iter().filter(|&&t| t == 1).count();
        if treated == 0 || treated == treatment.len() {
            return Err(Error::DegenerateTreatmentArm(format!(
                "{treated} of {} rows treated",
                treatment.len()
            )));
        }
        let labels: Vec<f64> = treatment.iter().map(|&t| f64::from(t)).collect();
        Ok(PropensityFit {
            fit: fit_logistic(x, &labels, &self.settings)?,
            eps: self.eps,
        })
    }
}

impl PropensityLearner for LogisticPropensity {
    fn fit(&self, x: ArrayView2<'_, f64>, treatment: &[u8]) -> Result<Arc<dyn PropensityModel>> {
        Ok(Arc::new(self.fit_model(x, treatment)?))
    }
}

pub fn fit_propensity(x: ArrayView2<'_, f64>, treatment: &[u8]) -> Result<PropensityFit> {
    LogisticPropensity::default().fit_model(x, treatment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal(n: usize, d: usize, shift: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| shift + rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn no_shift_gives_flat_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = normal(20_000, 2, 0.0, &mut rng);
        let t = normal(20_000, 2, 0.0, &mut rng);
        let m = fit_density_ratio(s.view(), t.view()).unwrap();
        let w: Vec<f64> = s.rows().into_iter().map(|r| m.ratio(r)).collect();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        for r in s.rows().into_iter().take(200) {
            assert!((m.ratio(r) / mean - 1.0).abs() < 0.1);
        }
    }

    #[test]
    fn gaussian_mean_shift_log_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = normal(5000, 1, 0.0, &mut rng);
        let t = normal(5000, 1, 0.5, &mut rng);
        let m = fit_density_ratio(s.view(), t.view()).unwrap();
        let mut worst = 0.0_f64;
        for i in 0..=40 {
            let x = -2.0 + 0.1 * i as f64;
            let err = (m.log_ratio(array![x].view()) - (0.5 * x - 0.125)).abs();
            worst = worst.max(err);
        }
        assert!(worst < 0.1, "sup-norm log-ratio error {worst}");
    }

    #[test]
    fn ratio_is_clipped_and_separation_flagged() {
        let s = array![[-3.0], [-2.0], [-1.0]];
        let t = array![[1.0], [2.0], [3.0]];
        let learner = LogisticRatio {
            settings: LogisticSettings {
                l2: 0.0,
                max_iter: 20_000,
                tol: 1e-12,
            },
            ..Default::default()
        };
        let m = learner.fit_model(s.view(), t.view()).unwrap();
        assert!(m.separated());
        assert_eq!(m.ratio(array![50.0].view()), 1e3);
        assert_eq!(m.ratio(array![-50.0].view()), 1e-3);
    }

    #[test]
    fn empty_target_is_rejected() {
        let s = array![[0.0], [1.0]];
        let t = Array2::<f64>::zeros((0, 1));
        assert!(fit_density_ratio(s.view(), t.view()).is_err());
    }

    #[test]
    fn randomized_propensity_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = normal(4000, 3, 0.0, &mut rng);
        let t: Vec<u8> = (0..4000).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
        let m = fit_propensity(x.view(), &t).unwrap();
        for r in x.rows().into_iter().take(500) {
            assert!((m.propensity(r) - 0.5).abs() < 0.05);
        }
    }

    #[test]
    fn logistic_propensity_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = normal(5000, 1, 0.0, &mut rng);
        let t: Vec<u8> = x
            .column(0)
            .iter()
            .map(|&v| u8::from(rng.random::<f64>() < sigmoid(v)))
            .collect();
        let m = fit_propensity(x.view(), &t).unwrap();
        let mut worst = 0.0_f64;
        for i in 0..=40 {
            let v = -2.0 + 0.1 * i as f64;
            worst = worst.max((m.propensity(array![v].view()) - sigmoid(v)).abs());
        }
        assert!(worst <= 0.05, "sup-norm propensity error {worst}");
    }

    #[test]
    fn degenerate_arm_is_rejected() {
        let x = array![[0.0], [1.0], [2.0]];
        assert!(matches!(
            fit_propensity(x.view(), &[1, 1, 1]),
            Err(Error::DegenerateTreatmentArm(_))
        ));
    }
}
