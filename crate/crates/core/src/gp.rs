//! Fixed-design Gaussian-process regression with known noise variance.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{check_geometry, cov_matrix, CovarianceModel};
use crate::error::{Error, Result};
use crate::linalg::CholeskyFactor;
use crate::points::Points;
use crate::specfun::normal_quantile;

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;
const NEG_VAR_TOL: f64 = 1e-8;
const LN_2PI: f64 = 1.8378770664093453;

/// Observations Y_j = w(x_j) + ε_j with ε_j ~ N(0, ω).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Points,
    pub y: Vec<f64>,
    pub omega: f64,
}

impl Dataset {
    pub fn new(x: Points, y: Vec<f64>, omega: f64) -> Result<Self> {
        let d = Self { x, y, omega };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.is_empty() {
            return Err(Error::InvalidArgument("dataset needs at least one observation".into()));
        }
        if self.x.len() != self.y.len() {
            return Err(Error::DimensionMismatch {
                expected: self.x.len(),
                found: self.y.len(),
            });
        }
        if let Some(i) = self.y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("response {i} is {}", self.y[i])));
        }
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise variance omega must be positive, got {}",
                self.omega
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }
}

/// Predictive mean and variance of the latent function at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub var: f64,
}

/// Cholesky-factored posterior for one dataset and model.
#[derive(Debug)]
pub struct GpPosterior {
    model: CovarianceModel,
    chol: CholeskyFactor,
    weights: DVector<f64>,
    train: Points,
    omega: f64,
    jitter_used: f64,
    y_alpha: f64,
    clamped: AtomicUsize,
}

/// Factors K + ωI, adding diagonal jitter 1e-10·mean(diag), ×10 per retry up
/// to 1e-4·mean(diag), when the plain factorization fails.
pub fn factor_with_jitter(k: &DMatrix<f64>) -> Result<(CholeskyFactor, f64)> {
    let n = k.nrows();
    let diag = k.diagonal();
    let mean_diag = diag.mean();
    if let Some(c) = CholeskyFactor::new(k) {
        return Ok((c, 0.0));
    }
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-12) {
        let jitter = rel * mean_diag;
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = CholeskyFactor::new(&kj) {
            log::debug!("factorization of order {n} needed jitter {jitter:e}");
            return Ok((c, jitter));
        }
        rel *= 10.0;
    }
    Err(Error::NotPositiveDefinite {
        order: n,
        max_jitter: JITTER_MAX * mean_diag,
        min_diag: diag.min(),
        max_diag: diag.max(),
    })
}

pub fn fit(data: &Dataset, model: &CovarianceModel) -> Result<GpPosterior> {
    data.validate()?;
    check_geometry(data.dim(), model)?;
    let k = cov_matrix(&data.x, model, data.omega)?;
    let (chol, jitter_used) = factor_with_jitter(&k)?;
    let y = DVector::from_column_slice(&data.y);
    let weights = chol.solve(&y);
    let y_alpha = y.dot(&weights);
    Ok(GpPosterior {
        model: model.clone(),
        chol,
        weights,
        train: data.x.clone(),
        omega: data.omega,
        jitter_used,
        y_alpha,
        clamped: AtomicUsize::new(0),
    })
}

impl GpPosterior {
    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// Lower-triangular L with LLᵀ = K + ωI + jitter·I.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// (K + ωI)⁻¹y.
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn train(&self) -> &Points {
        &self.train
    }

    /// Number of predictive variances in (−1e-8·max(1, cov(0)), 0) that
    /// were clamped to zero.
    pub fn clamped_variances(&self) -> usize {
        self.clamped.load(Ordering::Relaxed)
    }

    /// −½yᵀ(K+ωI)⁻¹y − ½log det(K+ωI) − (n/2)log 2π.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.weights.len() as f64;
        -0.5 * self.y_alpha - 0.5 * self.chol.ln_det() - 0.5 * n * LN_2PI
    }

    fn finish_var(&self, raw: f64, cov0: f64) -> Result<f64> {
        if raw >= 0.0 {
            Ok(raw)
        } else if raw > -NEG_VAR_TOL * cov0.max(1.0) {
            self.clamped.fetch_add(1, Ordering::Relaxed);
            Ok(0.0)
        } else {
            Err(Error::Condition(format!(
                "predictive variance {raw:e} is negative beyond roundoff"
            )))
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let one = Points::new(self.train.dim(), x.to_vec())?;
        Ok(self.predict_many(&one)?[0])
    }

    pub fn predict_many(&self, xs: &Points) -> Result<Vec<Prediction>> {
        if xs.dim() != self.train.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.train.dim(),
                found: xs.dim(),
            });
        }
        let ev = self.model.evaluator()?;
        let n = self.train.len();
        let m = xs.len();
        let mut lags = Vec::with_capacity(n * m);
        for x in xs.iter() {
            for t in self.train.iter() {
                lags.push(ev.distance(t, x)?);
            }
        }
        ev.cov_of_lags(&mut lags)?;
        let kstar = DMatrix::from_vec(n, m, lags);
        let means = kstar.tr_mul(&self.weights);
        let v = self.chol.solve_lower_matrix(&kstar);
        let cov0 = ev.at_lag(0.0)?;
        let mut out = Vec::with_capacity(m);
        for j in 0..m {
            let col = v.column(j);
            let raw = cov0 - col.dot(&col);
            out.push(Prediction {
                mean: means[j],
                var: self.finish_var(raw, cov0)?,
            });
        }
        Ok(out)
    }

    /// Observation-level interval mean ± z·sqrt(var + ω).
    pub fn interval(&self, p: &Prediction, level: f64) -> Result<(f64, f64)> {
        credible_interval(p.mean, p.var, level, self.omega)
    }
}

pub fn log_marginal_likelihood(data: &Dataset, model: &CovarianceModel) -> Result<f64> {
    Ok(fit(data, model)?.log_marginal_likelihood())
}

/// mean ± z_{(1+level)/2}·sqrt(var + ω): a predictive interval for a new
/// observation.
pub fn credible_interval(mean: f64, var: f64, level: f64, omega: f64) -> Result<(f64, f64)> {
    if !(var >= 0.0) || !(omega >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "variances must be non-negative (var {var}, omega {omega})"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level must lie in (0,1), got {level}")));
    }
    let z = normal_quantile(0.5 * (1.0 + level))?;
    let half = z * (var + omega).sqrt();
    Ok((mean - half, mean + half))
}

/// sqrt((1/n) Σ wᵢ²); zero for an empty slice.
pub fn empirical_norm(w: &[f64]) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    (w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_case() {
        let m = CovarianceModel::matern(1.5, 0.5, 3.0).unwrap();
        let data = Dataset::new(Points::from_1d(&[0.2]).unwrap(), vec![0.7], 1.0).unwrap();
        let post = fit(&data, &m).unwrap();
        assert!((post.chol_factor()[(0, 0)] - 2.0).abs() < 1e-15);
        assert_eq!(post.jitter_used(), 0.0);
    }

    #[test]
    fn lml_scalar_examples() {
        let m = CovarianceModel::sqexp(1.0, 0.5).unwrap();
        let d0 = Dataset::new(Points::from_1d(&[0.0]).unwrap(), vec![0.0], 0.5).unwrap();
        assert!((log_marginal_likelihood(&d0, &m).unwrap() + 0.5 * LN_2PI).abs() < 1e-15);
        let d1 = Dataset::new(Points::from_1d(&[0.0]).unwrap(), vec![1.0], 0.5).unwrap();
        assert!((log_marginal_likelihood(&d1, &m).unwrap() + 0.5 + 0.5 * LN_2PI).abs() < 1e-15);
    }

    #[test]
    fn duplicates_are_regularized_by_noise() {
        let m = CovarianceModel::matern(2.0, 0.3, 1.0).unwrap();
        let x = Points::from_1d(&[0.5, 0.5, 0.5, 0.1]).unwrap();
        let data = Dataset::new(x, vec![1.0, 1.1, 0.9, 0.0], 0.01).unwrap();
        assert!(fit(&data, &m).is_ok());
    }

    #[test]
    fn far_point_reverts_to_prior() {
        let m = CovarianceModel::matern(1.5, 0.1, 2.0).unwrap();
        let data = Dataset::new(Points::from_1d(&[0.0, 0.1, 0.2]).unwrap(), vec![1.0, 2.0, 1.5], 0.1).unwrap();
        let p = fit(&data, &m).unwrap().predict(&[100.0]).unwrap();
        assert!(p.mean.abs() < 1e-12);
        assert!((p.var - 2.0).abs() < 1e-12);
    }

    #[test]
    fn near_interpolation() {
        let m = CovarianceModel::matern(2.5, 0.5, 1.0).unwrap();
        let data = Dataset::new(Points::from_1d(&[0.1, 0.4, 0.8]).unwrap(), vec![0.3, -0.2, 0.5], 1e-12).unwrap();
        let post = fit(&data, &m).unwrap();
        let p = post.predict(&[0.4]).unwrap();
        assert!((p.mean + 0.2).abs() < 1e-5);
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let mut k = DMatrix::from_element(3, 3, 1.0);
        k[(2, 2)] = 1.0 - 1e-13;
        let (_, jitter) = factor_with_jitter(&k).unwrap();
        assert!(jitter > 0.0 && jitter <= 1e-4);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            factor_with_jitter(&bad),
            Err(Error::NotPositiveDefinite { order: 2, .. })
        ));
    }

    #[test]
    fn interval_examples() {
        let (lo, hi) = credible_interval(0.0, 0.0, 0.95, 1.0).unwrap();
        assert!((hi - 1.959963984540054).abs() < 1e-12 && (lo + hi).abs() < 1e-15);
        let (_, hi) = credible_interval(0.0, 0.0, 0.5, 4.0).unwrap();
        assert!((hi - 2.0 * 0.6744897501960817).abs() < 1e-12);
        assert!(credible_interval(0.0, -1.0, 0.95, 1.0).is_err());
        assert!(credible_interval(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn empirical_norm_examples() {
        assert_eq!(empirical_norm(&[0.0; 5]), 0.0);
        assert!((empirical_norm(&[-2.5; 7]) - 2.5).abs() < 1e-15);
        assert!((empirical_norm(&[3.0, 4.0]) - 12.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn dataset_validation() {
        let x = Points::from_1d(&[0.0, 1.0]).unwrap();
        assert!(Dataset::new(x.clone(), vec![1.0], 1.0).is_err());
        assert!(Dataset::new(x.clone(), vec![1.0, f64::NAN], 1.0).is_err());
        assert!(Dataset::new(x, vec![1.0, 2.0], 0.0).is_err());
    }
}
