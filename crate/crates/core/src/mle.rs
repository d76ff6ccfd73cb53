//! Maximum-likelihood estimation of kernel parameters with the smoothness v
//! held fixed.

use serde::{Deserialize, Serialize};

use crate::covariance::{ChParams, CovarianceModel, Kernel, MaternParams, SqExpParams};
use crate::error::{Error, Result};
use crate::gp::{fit, Dataset};
use crate::optimize::nelder_mead;

/// Bound on |ln θ| for every free parameter θ.
const LOG_BOUND: f64 = 20.0;
const RESTART_OFFSET: f64 = 0.75;
const SIMPLEX_STEP: f64 = 0.5;

/// Which parameters the likelihood is maximized over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FreeParams {
    /// Lengthscale (φ, (α, β) or c) and σ².
    #[default]
    All,
    /// σ² only.
    Sigma2Only,
    /// Lengthscale only (φ, β or c); α and σ² stay fixed.
    LengthscaleOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub budget: usize,
    pub restarts: usize,
    #[serde(default)]
    pub free: FreeParams,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            budget: 500,
            restarts: 3,
            free: FreeParams::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub model: CovarianceModel,
    /// `None` when the budget was zero and nothing was evaluated.
    pub log_likelihood: Option<f64>,
    pub evaluations: usize,
    pub failures: usize,
}

/// Free parameters of `model` in natural scale, in the order
/// Matérn (φ, σ²), CH (α, β, σ²), squared exponential (c, σ²), restricted
/// to `free`.
pub fn free_parameters(model: &CovarianceModel, free: FreeParams) -> Vec<f64> {
    let (ls, s2): (Vec<f64>, f64) = match model.kernel {
        Kernel::Matern(p) => (vec![p.phi], p.sigma2),
        Kernel::Ch(p) => match free {
            FreeParams::LengthscaleOnly => (vec![p.beta], p.sigma2),
            _ => (vec![p.alpha, p.beta], p.sigma2),
        },
        Kernel::SqExp(p) => (vec![p.c], p.sigma2),
    };
    match free {
        FreeParams::All => ls.into_iter().chain(std::iter::once(s2)).collect(),
        FreeParams::Sigma2Only => vec![s2],
        FreeParams::LengthscaleOnly => ls,
    }
}

/// Inverse of [`free_parameters`].
pub fn with_free_parameters(model: &CovarianceModel, free: FreeParams, theta: &[f64]) -> Result<CovarianceModel> {
    let expected = free_parameters(model, free).len();
    if theta.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: theta.len(),
        });
    }
    let kernel = match (model.kernel, free) {
        (Kernel::Matern(p), FreeParams::All) => Kernel::Matern(MaternParams::new(p.v, theta[0], theta[1])?),
        (Kernel::Matern(p), FreeParams::Sigma2Only) => Kernel::Matern(MaternParams::new(p.v, p.phi, theta[0])?),
        (Kernel::Matern(p), FreeParams::LengthscaleOnly) => Kernel::Matern(MaternParams::new(p.v, theta[0], p.sigma2)?),
        (Kernel::Ch(p), FreeParams::All) => Kernel::Ch(ChParams::new(p.v, theta[0], theta[1], theta[2])?),
        (Kernel::Ch(p), FreeParams::Sigma2Only) => Kernel::Ch(ChParams::new(p.v, p.alpha, p.beta, theta[0])?),
        (Kernel::Ch(p), FreeParams::LengthscaleOnly) => Kernel::Ch(ChParams::new(p.v, p.alpha, theta[0], p.sigma2)?),
        (Kernel::SqExp(_), FreeParams::All) => Kernel::SqExp(SqExpParams::new(theta[0], theta[1])?),
        (Kernel::SqExp(p), FreeParams::Sigma2Only) => Kernel::SqExp(SqExpParams::new(p.c, theta[0])?),
        (Kernel::SqExp(p), FreeParams::LengthscaleOnly) => Kernel::SqExp(SqExpParams::new(theta[0], p.sigma2)?),
    };
    Ok(model.with_kernel(kernel))
}

/// Maximizes the log marginal likelihood over the log of the free
/// parameters by Nelder–Mead, from `init` (natural scale; `None` takes the
/// template's values) and `restarts − 1` deterministically offset starts.
/// The evaluation budget is shared across starts.
pub fn mle_fit(data: &Dataset, template: &CovarianceModel, init: Option<&[f64]>, opts: &MleOptions) -> Result<MleFit> {
    template.validate()?;
    data.validate()?;
    let theta0 = match init {
        Some(t) => t.to_vec(),
        None => free_parameters(template, opts.free),
    };
    let start_model = with_free_parameters(template, opts.free, &theta0)?;
    if opts.budget == 0 {
        return Ok(MleFit {
            model: start_model,
            log_likelihood: None,
            evaluations: 0,
            failures: 0,
        });
    }
    let log0: Vec<f64> = theta0.iter().map(|t| t.ln()).collect();
    let mut first_error: Option<String> = None;
    let mut objective = |z: &[f64]| -> f64 {
        if z.iter().any(|v| v.abs() > LOG_BOUND) {
            return f64::INFINITY;
        }
        let theta: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let result = with_free_parameters(template, opts.free, &theta).and_then(|m| fit(data, &m));
        match result {
            Ok(post) => -post.log_marginal_likelihood(),
            Err(e) => {
                first_error.get_or_insert_with(|| e.to_string());
                f64::INFINITY
            }
        }
    };
    let restarts = opts.restarts.max(1);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut evaluations = 0;
    let mut failures = 0;
    for r in 0..restarts {
        let remaining = opts.budget - evaluations;
        if remaining == 0 {
            break;
        }
        let share = remaining / (restarts - r);
        let start: Vec<f64> = log0
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if r == 0 {
                    *v
                } else {
                    let sign = if (i + r) % 2 == 0 { 1.0 } else { -1.0 };
                    v + sign * RESTART_OFFSET * r.div_ceil(2) as f64
                }
            })
            .collect();
        let res = nelder_mead(&mut objective, &start, SIMPLEX_STEP, share.max(1), 1e-10, 1e-6);
        evaluations += res.evaluations;
        failures += res.failures;
        if res.value.is_finite() && best.as_ref().is_none_or(|b| res.value < b.1) {
            best = Some((res.x, res.value));
        }
    }
    match best {
        Some((z, value)) => {
            let theta: Vec<f64> = z.iter().map(|v| v.exp()).collect();
            Ok(MleFit {
                model: with_free_parameters(template, opts.free, &theta)?,
                log_likelihood: Some(-value),
                evaluations,
                failures,
            })
        }
        None => Err(Error::Optimization {
            evaluations,
            reason: format!(
                "every likelihood evaluation failed; first failure: {}",
                first_error.unwrap_or_else(|| "parameters out of bounds".into())
            ),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::points::Points;

    #[test]
    fn parameter_vector_round_trip() {
        let m = CovarianceModel::ch(2.0, 3.0, 0.4, 1.5).unwrap();
        let t = free_parameters(&m, FreeParams::All);
        assert_eq!(t, vec![3.0, 0.4, 1.5]);
        assert_eq!(with_free_parameters(&m, FreeParams::All, &t).unwrap(), m);
        assert_eq!(free_parameters(&m, FreeParams::LengthscaleOnly), vec![0.4]);
        assert!(with_free_parameters(&m, FreeParams::All, &[1.0]).is_err());
    }

    #[test]
    fn zero_budget_returns_init() {
        let m = CovarianceModel::matern(1.5, 0.3, 1.0).unwrap();
        let data = Dataset::new(Points::from_1d(&[0.0, 0.5]).unwrap(), vec![1.0, -1.0], 0.1).unwrap();
        let opts = MleOptions {
            budget: 0,
            ..MleOptions::default()
        };
        let r = mle_fit(&data, &m, Some(&[0.7, 2.0]), &opts).unwrap();
        assert_eq!(r.model, CovarianceModel::matern(1.5, 0.7, 2.0).unwrap());
        assert_eq!(r.evaluations, 0);
    }

    #[test]
    fn budget_is_respected_and_deterministic() {
        let m = CovarianceModel::matern(1.5, 0.3, 1.0).unwrap();
        let xs: Vec<f64> = (0..15).map(|i| i as f64 / 14.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (6.0 * x).sin()).collect();
        let data = Dataset::new(Points::from_1d(&xs).unwrap(), ys, 0.01).unwrap();
        let opts = MleOptions {
            budget: 60,
            ..MleOptions::default()
        };
        let a = mle_fit(&data, &m, None, &opts).unwrap();
        let b = mle_fit(&data, &m, None, &opts).unwrap();
        assert!(a.evaluations <= 60);
        assert_eq!(a, b);
        let init_lml = crate::gp::log_marginal_likelihood(&data, &m).unwrap();
        assert!(a.log_likelihood.unwrap() >= init_lml);
    }
}
