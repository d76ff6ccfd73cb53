//! Hierarchical treatment of the rescaling variable A = 1/lengthscale:
//! Gamma(1,1) prior on A^{kd}, random-walk Metropolis–Hastings on ln A, and
//! the resulting Gaussian-mixture posterior predictive.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::covariance::{ChParams, CovarianceModel, Kernel, MaternParams, SqExpParams};
use crate::error::{domain, Error, Result};
use crate::gp::{fit, Dataset, GpPosterior};
use crate::points::Points;
use crate::specfun::{normal_cdf, normal_quantile};

/// Gamma(1,1) prior on A^{kd}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierPrior {
    pub k: f64,
    pub d: usize,
}

impl HierPrior {
    pub fn new(k: f64, d: usize) -> Result<Self> {
        let p = Self { k, d };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k >= 1.0) || !self.k.is_finite() {
            return Err(domain("hier_prior", format!("k must be at least 1, got {}", self.k)));
        }
        if self.d == 0 {
            return Err(domain("hier_prior", "dimension must be at least 1"));
        }
        Ok(())
    }

    pub fn kd(&self) -> f64 {
        self.k * self.d as f64
    }
}

/// ln g_A(a) = ln(kd) + (kd−1) ln a − a^{kd}.
pub fn log_prior_a(a: f64, prior: &HierPrior) -> Result<f64> {
    prior.validate()?;
    if !(a > 0.0) || !a.is_finite() {
        return Err(domain("log_prior_a", format!("a must be positive and finite, got {a}")));
    }
    Ok(log_prior_unchecked(a, prior.kd()))
}

fn log_prior_unchecked(a: f64, kd: f64) -> f64 {
    kd.ln() + (kd - 1.0) * a.ln() - a.powf(kd)
}

/// The template with its lengthscale set from A: φ = 1/A (Matérn),
/// β = 1/A (CH), c = 1/A² (squared exponential).
pub fn model_at(template: &CovarianceModel, a: f64) -> Result<CovarianceModel> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(domain("model_at", format!("a must be positive and finite, got {a}")));
    }
    let kernel = match template.kernel {
        Kernel::Matern(p) => Kernel::Matern(MaternParams::new(p.v, 1.0 / a, p.sigma2)?),
        Kernel::Ch(p) => Kernel::Ch(ChParams::new(p.v, p.alpha, 1.0 / a, p.sigma2)?),
        Kernel::SqExp(p) => Kernel::SqExp(SqExpParams::new(1.0 / (a * a), p.sigma2)?),
    };
    Ok(template.with_kernel(kernel))
}

/// A of the template's current lengthscale.
pub fn a_of(template: &CovarianceModel) -> f64 {
    match template.kernel {
        Kernel::Matern(p) => 1.0 / p.phi,
        Kernel::Ch(p) => 1.0 / p.beta,
        Kernel::SqExp(p) => 1.0 / p.c.sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MhConfig {
    pub burn_in: usize,
    pub draws: usize,
    pub proposal_sd: f64,
    pub seed: u64,
    /// Starting value of A; `None` starts from the template's lengthscale.
    #[serde(default)]
    pub init_a: Option<f64>,
}

impl Default for MhConfig {
    fn default() -> Self {
        Self {
            burn_in: 500,
            draws: 5000,
            proposal_sd: 0.5,
            seed: 0,
            init_a: None,
        }
    }
}

/// One MH iteration, burn-in included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub a: f64,
    pub log_posterior: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierChain {
    /// Post-burn-in draws of A.
    pub samples: Vec<f64>,
    /// Log target (in ln A coordinates) at each retained draw.
    pub log_posteriors: Vec<f64>,
    /// Acceptance fraction over the post-burn-in iterations.
    pub acceptance_rate: f64,
    pub burn_in: usize,
    pub proposal_sd: f64,
    /// Proposals whose likelihood could not be evaluated.
    pub failed_proposals: usize,
    pub trace: Vec<TraceRow>,
}

/// Random-walk MH on ln A targeting
/// ln p(y | A) + ln g_A(A) + ln A.
pub fn mh_sample(data: &Dataset, template: &CovarianceModel, prior: &HierPrior, cfg: &MhConfig) -> Result<HierChain> {
    template.validate()?;
    let log_lik = |a: f64| -> Option<f64> {
        let m = model_at(template, a).ok()?;
        fit(data, &m).ok().map(|p| p.log_marginal_likelihood())
    };
    mh_with_likelihood(log_lik, prior, cfg, a_of(template))
}

/// [`mh_sample`] with an arbitrary log-likelihood in A; `None` marks a
/// failed evaluation, which rejects the proposal.
pub fn mh_with_likelihood<F: FnMut(f64) -> Option<f64>>(
    mut log_lik: F,
    prior: &HierPrior,
    cfg: &MhConfig,
    default_init: f64,
) -> Result<HierChain> {
    prior.validate()?;
    if !(cfg.proposal_sd > 0.0) || !cfg.proposal_sd.is_finite() {
        return Err(Error::Sampler(format!(
            "proposal_sd must be positive, got {}",
            cfg.proposal_sd
        )));
    }
    if cfg.draws == 0 {
        return Err(Error::Sampler("draws must be at least 1".into()));
    }
    let kd = prior.kd();
    let mut target = |u: f64| -> Option<f64> {
        let a = u.exp();
        if !(a > 0.0) || !a.is_finite() {
            return None;
        }
        let ll = log_lik(a)?;
        let t = ll + log_prior_unchecked(a, kd) + u;
        t.is_finite().then_some(t)
    };
    let a0 = cfg.init_a.unwrap_or(default_init);
    if !(a0 > 0.0) || !a0.is_finite() {
        return Err(Error::Sampler(format!("initial A must be positive, got {a0}")));
    }
    let mut u = a0.ln();
    let mut t =
        target(u).ok_or_else(|| Error::Sampler(format!("log posterior is undefined at the initial A = {a0}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unif = Uniform::new(0.0f64, 1.0).expect("valid range");
    let total = cfg.burn_in + cfg.draws;
    let mut trace = Vec::with_capacity(total);
    let mut failed = 0usize;
    let mut accepted_after_burn = 0usize;
    for it in 0..total {
        let z: f64 = StandardNormal.sample(&mut rng);
        let u_new = u + cfg.proposal_sd * z;
        let log_uniform = unif.sample(&mut rng).ln();
        let accepted = match target(u_new) {
            Some(t_new) if log_uniform < t_new - t => {
                u = u_new;
                t = t_new;
                true
            }
            Some(_) => false,
            None => {
                failed += 1;
                false
            }
        };
        if accepted && it >= cfg.burn_in {
            accepted_after_burn += 1;
        }
        trace.push(TraceRow {
            iteration: it,
            a: u.exp(),
            log_posterior: t,
            accepted,
        });
        let done = it + 1;
        if done >= 100 && 2 * failed > done {
            return Err(Error::Sampler(format!(
                "{failed} of {done} proposals had an undefined likelihood (last A = {})",
                u.exp()
            )));
        }
    }
    let kept = &trace[cfg.burn_in..];
    Ok(HierChain {
        samples: kept.iter().map(|r| r.a).collect(),
        log_posteriors: kept.iter().map(|r| r.log_posterior).collect(),
        acceptance_rate: accepted_after_burn as f64 / cfg.draws as f64,
        burn_in: cfg.burn_in,
        proposal_sd: cfg.proposal_sd,
        failed_proposals: failed,
        trace,
    })
}

impl HierChain {
    /// Draws at positions 0, thin, 2·thin, …
    pub fn thinned(&self, thin: usize) -> Result<Vec<f64>> {
        if thin == 0 || thin >= self.samples.len() {
            return Err(Error::Sampler(format!(
                "thin = {thin} must lie in [1, {})",
                self.samples.len()
            )));
        }
        Ok(self.samples.iter().step_by(thin).copied().collect())
    }
}

/// Equal-weight mixture of normals.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(means: Vec<f64>, sds: Vec<f64>) -> Result<Self> {
        if means.is_empty() || means.len() != sds.len() {
            return Err(Error::InvalidArgument(
                "mixture needs matching, non-empty means and sds".into(),
            ));
        }
        if sds.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidArgument("mixture sds must be non-negative".into()));
        }
        Ok(Self { means, sds })
    }

    pub fn mean(&self) -> f64 {
        self.means.iter().sum::<f64>() / self.means.len() as f64
    }

    /// Law of total variance.
    pub fn var(&self) -> f64 {
        let m = self.mean();
        let k = self.means.len() as f64;
        self.means
            .iter()
            .zip(&self.sds)
            .map(|(mu, s)| s * s + (mu - m) * (mu - m))
            .sum::<f64>()
            / k
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let total: f64 = self
            .means
            .iter()
            .zip(&self.sds)
            .map(|(mu, s)| {
                if *s == 0.0 {
                    if x >= *mu {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    normal_cdf((x - mu) / s)
                }
            })
            .sum();
        total / self.means.len() as f64
    }

    /// Quantile by bisection to absolute width `tol`.
    pub fn quantile(&self, p: f64, tol: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "probability must lie in (0,1), got {p}"
            )));
        }
        let z = normal_quantile(p)?.abs() + 1.0;
        let lo0 = self
            .means
            .iter()
            .zip(&self.sds)
            .map(|(m, s)| m - z * s)
            .fold(f64::INFINITY, f64::min);
        let hi0 = self
            .means
            .iter()
            .zip(&self.sds)
            .map(|(m, s)| m + z * s)
            .fold(f64::NEG_INFINITY, f64::max);
        let (mut lo, mut hi) = (lo0 - 1.0, hi0 + 1.0);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Mixture predictive at one point: latent mean and variance plus the
/// observation-level interval at the requested level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixturePrediction {
    pub mean: f64,
    pub var: f64,
    pub lo: f64,
    pub hi: f64,
}

pub const QUANTILE_TOL: f64 = 1e-6;

/// Posterior predictive averaged over the thinned chain. Each component is
/// the GP predictive under one draw of A; intervals come from the mixture
/// of the observation-level normals N(mean_i, var_i + ω).
pub fn hier_predict(
    chain: &HierChain,
    data: &Dataset,
    template: &CovarianceModel,
    xs: &Points,
    thin: usize,
    level: f64,
) -> Result<Vec<MixturePrediction>> {
    let draws = chain.thinned(thin)?;
    let mut cache: HashMap<u64, Vec<crate::gp::Prediction>> = HashMap::new();
    let mut per_draw = Vec::with_capacity(draws.len());
    for &a in &draws {
        let key = a.to_bits();
        if let std::collections::hash_map::Entry::Vacant(e) = cache.entry(key) {
            let post: GpPosterior = fit(data, &model_at(template, a)?)?;
            e.insert(post.predict_many(xs)?);
        }
        per_draw.push(key);
    }
    let lo_p = 0.5 * (1.0 - level);
    let hi_p = 0.5 * (1.0 + level);
    let mut out = Vec::with_capacity(xs.len());
    for j in 0..xs.len() {
        let comps: Vec<&crate::gp::Prediction> = per_draw.iter().map(|k| &cache[k][j]).collect();
        let latent = GaussianMixture::new(
            comps.iter().map(|p| p.mean).collect(),
            comps.iter().map(|p| p.var.sqrt()).collect(),
        )?;
        let observed = GaussianMixture::new(
            latent.means.clone(),
            comps.iter().map(|p| (p.var + data.omega).sqrt()).collect(),
        )?;
        out.push(MixturePrediction {
            mean: latent.mean(),
            var: latent.var(),
            lo: observed.quantile(lo_p, QUANTILE_TOL)?,
            hi: observed.quantile(hi_p, QUANTILE_TOL)?,
        });
    }
    Ok(out)
}
