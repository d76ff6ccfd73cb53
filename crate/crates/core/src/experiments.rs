//! Simulation harness: truth generators, uniform designs, replicated
//! scenarios with MSPE/CVG/ALCI metrics, and the log-log contraction-rate
//! checker.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{cov_matrix, CovarianceModel, Kernel};
use crate::error::{Error, Result};
use crate::gp::{credible_interval, empirical_norm, factor_with_jitter, fit, Dataset, GpPosterior};
use crate::hier::{a_of, hier_predict, mh_sample, model_at, HierChain, HierPrior, MhConfig};
use crate::mle::{mle_fit, FreeParams, MleOptions};
use crate::points::Points;
use crate::schedules::RescalingSchedule;

/// Largest lattice handed to a dense Cholesky.
pub const MAX_DENSE_POINTS: usize = 4000;
/// Brownian truths live on this many equispaced nodes of [0, 1].
pub const BROWNIAN_LATTICE: usize = 4096;

const SEED_TRUTH: u64 = 1;
const SEED_DESIGN: u64 = 2;
const SEED_NOISE: u64 = 3;
const SEED_CHAIN: u64 = 4;
const SEED_TEST: u64 = 5;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of stream `r` under `seed`; distinct r give unrelated streams.
pub fn derive_seed(seed: u64, r: u64) -> u64 {
    splitmix64(seed ^ splitmix64(r.wrapping_add(0x5EED)))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Brownian path on a sorted grid in [0, 1] with W(0) = 0: cumulative
/// N(0, spacing) increments, multiplied by `scale`.
pub fn gen_brownian_truth(grid: &[f64], scale: f64, seed: u64) -> Result<Vec<f64>> {
    if !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("scale must be finite, got {scale}")));
    }
    if grid.iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(Error::InvalidArgument("grid must lie in [0, 1]".into()));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("grid must be sorted ascending".into()));
    }
    let mut r = rng(seed);
    let mut prev = 0.0;
    let mut w = 0.0;
    Ok(grid
        .iter()
        .map(|&g| {
            let z: f64 = r.sample(StandardNormal);
            w += (g - prev).sqrt() * z;
            prev = g;
            scale * w
        })
        .collect())
}

/// Zero-mean GP draw L·z on `grid`, L the jittered Cholesky factor.
pub fn gen_gp_truth(grid: &Points, model: &CovarianceModel, seed: u64) -> Result<Vec<f64>> {
    if grid.len() > MAX_DENSE_POINTS {
        return Err(Error::InvalidArgument(format!(
            "GP truth grid has {} points, limit is {MAX_DENSE_POINTS}",
            grid.len()
        )));
    }
    let k = cov_matrix(grid, model, 0.0)?;
    let (chol, _) = factor_with_jitter(&k)?;
    let l = chol.l();
    let mut r = rng(seed);
    let z: Vec<f64> = (0..grid.len()).map(|_| r.sample(StandardNormal)).collect();
    Ok((0..grid.len())
        .map(|i| (0..=i).map(|j| l[(i, j)] * z[j]).sum())
        .collect())
}

/// Nodes per axis of the GP truth lattice in dimension d.
pub fn gp_lattice_size(d: usize) -> usize {
    match d {
        1 => 1024,
        2 => 48,
        _ => (2304f64.powf(1.0 / d as f64)).floor().max(2.0) as usize,
    }
}

/// Values on the tensor lattice {i/(m−1)}^d of [0,1]^d, multilinearly
/// interpolated. Node order is row-major with the last coordinate fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeFunction {
    dim: usize,
    m: usize,
    values: Vec<f64>,
}

impl LatticeFunction {
    pub fn new(dim: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || m < 2 {
            return Err(Error::InvalidArgument(
                "lattice needs dim ≥ 1 and at least 2 nodes per axis".into(),
            ));
        }
        let expected = m.checked_pow(dim as u32).unwrap_or(usize::MAX);
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: values.len(),
            });
        }
        Ok(Self { dim, m, values })
    }

    pub fn nodes(dim: usize, m: usize) -> Result<Points> {
        let total = m.pow(dim as u32);
        let mut data = Vec::with_capacity(total * dim);
        for idx in 0..total {
            let mut rest = idx;
            let mut coords = vec![0.0; dim];
            for c in coords.iter_mut().rev() {
                *c = (rest % m) as f64 / (m - 1) as f64;
                rest /= m;
            }
            data.extend(coords);
        }
        Points::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let h = (self.m - 1) as f64;
        let mut base = vec![0usize; self.dim];
        let mut frac = vec![0.0; self.dim];
        for k in 0..self.dim {
            let t = x[k].clamp(0.0, 1.0) * h;
            let i = (t.floor() as usize).min(self.m - 2);
            base[k] = i;
            frac[k] = t - i as f64;
        }
        let mut total = 0.0;
        for corner in 0..(1usize << self.dim) {
            let mut weight = 1.0;
            let mut flat = 0;
            for k in 0..self.dim {
                let bit = (corner >> (self.dim - 1 - k)) & 1;
                weight *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                flat = flat * self.m + base[k] + bit;
            }
            if weight != 0.0 {
                total += weight * self.values[flat];
            }
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthSpec {
    /// Brownian motion times `scale` (d = 1 only).
    Brownian {
        #[serde(default = "default_brownian_scale")]
        scale: f64,
    },
    /// Realization of a zero-mean GP with this covariance.
    Gp {
        model: CovarianceModel,
    },
    Zero,
    /// Supplied by the caller through [`run_scenario_with_truth`].
    User,
}

fn default_brownian_scale() -> f64 {
    100.0
}

/// A drawn truth function.
pub enum Truth<'a> {
    Zero,
    Lattice(LatticeFunction),
    User(&'a (dyn Fn(&[f64]) -> f64 + Sync)),
}

impl Truth<'_> {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Truth::Zero => 0.0,
            Truth::Lattice(f) => f.eval(x),
            Truth::User(f) => f(x),
        }
    }
}

/// Draws the truth function of `spec` in dimension d.
pub fn draw_truth(spec: &TruthSpec, d: usize, seed: u64) -> Result<Truth<'static>> {
    match spec {
        TruthSpec::Zero => Ok(Truth::Zero),
        TruthSpec::Brownian { scale } => {
            if d != 1 {
                return Err(Error::InvalidArgument("Brownian truth requires d = 1".into()));
            }
            let grid: Vec<f64> = (0..BROWNIAN_LATTICE)
                .map(|i| i as f64 / (BROWNIAN_LATTICE - 1) as f64)
                .collect();
            let values = gen_brownian_truth(&grid, *scale, seed)?;
            Ok(Truth::Lattice(LatticeFunction::new(1, BROWNIAN_LATTICE, values)?))
        }
        TruthSpec::Gp { model } => {
            let m = gp_lattice_size(d);
            let nodes = LatticeFunction::nodes(d, m)?;
            let values = gen_gp_truth(&nodes, model, seed)?;
            Ok(Truth::Lattice(LatticeFunction::new(d, m, values)?))
        }
        TruthSpec::User => Err(Error::InvalidArgument(
            "a user truth must be passed to run_scenario_with_truth".into(),
        )),
    }
}

/// n points uniform on [0,1]^d.
pub fn uniform_design(n: usize, d: usize, seed: u64) -> Result<Points> {
    let mut r = rng(seed);
    Points::new(d, (0..n * d).map(|_| r.random::<f64>()).collect())
}

fn default_level() -> f64 {
    0.95
}

fn default_tune_iterations() -> usize {
    24
}

fn default_thin() -> usize {
    10
}

/// How the covariance parameters of each replicate are set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    /// Maximum likelihood over lengthscale and σ² (and α for CH).
    Mle {
        #[serde(default)]
        options: MleOptions,
    },
    /// Lengthscale from the schedule at the training size; σ² fixed when
    /// given, otherwise fitted by maximum likelihood.
    Rescaled {
        schedule: RescalingSchedule,
        #[serde(default)]
        sigma2: Option<f64>,
    },
    /// MLE lengthscale times a constant chosen by golden-section search so
    /// that test-set coverage is closest to the nominal level.
    RescaledTuned {
        #[serde(default)]
        options: MleOptions,
        #[serde(default = "default_tune_iterations")]
        iterations: usize,
    },
    /// MLE for σ² (and α), then MH over A with a Gamma(1,1) prior on
    /// A^{kd} (A^d for the squared exponential).
    Hierarchical {
        k: f64,
        #[serde(default)]
        mh: MhConfig,
        #[serde(default = "default_thin")]
        thin: usize,
        #[serde(default)]
        options: MleOptions,
    },
    /// Predicts with the true function and exact noise intervals.
    Oracle,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Mle { .. } => "mle",
            Method::Rescaled { .. } => "rescaled",
            Method::RescaledTuned { .. } => "rescaled_tuned",
            Method::Hierarchical { .. } => "hierarchical",
            Method::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub d: usize,
    pub n_total: usize,
    pub n_test: usize,
    pub truth: TruthSpec,
    pub omega: f64,
    pub method: Method,
    /// Family template: smoothness, fixed parameters and starting values.
    pub model: CovarianceModel,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        if self.n_test >= self.n_total {
            return bad(format!(
                "n_test = {} must be below n_total = {}",
                self.n_test, self.n_total
            ));
        }
        if self.n_total - self.n_test < 2 {
            return bad("at least 2 training points are required".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return bad(format!("omega must be positive, got {}", self.omega));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level must lie in (0, 1), got {}", self.level));
        }
        if let Some(b) = &self.model.anisotropy {
            if b.dim() != self.d {
                return Err(Error::DimensionMismatch {
                    expected: self.d,
                    found: b.dim(),
                });
            }
        }
        if let Method::Hierarchical { k, .. } = self.method {
            HierPrior::new(k, self.d)?;
        }
        if let Method::Rescaled { schedule, .. } = &self.method {
            schedule.validate()?;
        }
        self.model.validate()
    }

    pub fn n_train(&self) -> usize {
        self.n_total - self.n_test
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub replicate: usize,
    pub mspe: f64,
    pub cvg: f64,
    pub alci: f64,
}

/// MSPE, coverage and mean interval length against held-out values.
pub fn metrics(means: &[f64], intervals: &[(f64, f64)], actual: &[f64]) -> Result<MetricsRow> {
    if means.len() != actual.len() || intervals.len() != actual.len() {
        return Err(Error::DimensionMismatch {
            expected: actual.len(),
            found: if means.len() != actual.len() {
                means.len()
            } else {
                intervals.len()
            },
        });
    }
    if actual.is_empty() {
        return Err(Error::InvalidArgument(
            "metrics need at least one held-out value".into(),
        ));
    }
    let n = actual.len() as f64;
    let mspe = means.iter().zip(actual).map(|(m, y)| (m - y) * (m - y)).sum::<f64>() / n;
    let cvg = intervals
        .iter()
        .zip(actual)
        .filter(|((lo, hi), y)| lo <= *y && *y <= hi)
        .count() as f64
        / n;
    let alci = intervals.iter().map(|(lo, hi)| hi - lo).sum::<f64>() / n;
    Ok(MetricsRow {
        replicate: 0,
        mspe,
        cvg,
        alci,
    })
}

/// Per-replicate record of how the parameters were set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateInfo {
    pub replicate: usize,
    /// φ, β or √c of the model used for prediction (posterior mean of 1/A
    /// for the hierarchical method, NaN for the oracle).
    pub lengthscale: f64,
    pub sigma2: f64,
    pub acceptance_rate: Option<f64>,
    pub multiplier: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub rows: Vec<MetricsRow>,
    pub info: Vec<ReplicateInfo>,
    /// (replicate, message) for each failed replicate.
    pub failures: Vec<(usize, String)>,
}

/// Mean and sample standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl ScenarioReport {
    /// (mean, sd) of MSPE, CVG and ALCI over successful replicates.
    pub fn summary(&self) -> [(f64, f64); 3] {
        let col = |f: fn(&MetricsRow) -> f64| mean_sd(&self.rows.iter().map(f).collect::<Vec<_>>());
        [col(|r| r.mspe), col(|r| r.cvg), col(|r| r.alci)]
    }
}

struct Replicate {
    train: Dataset,
    test_x: Points,
    test_y: Vec<f64>,
}

fn simulate_replicate(cfg: &ScenarioConfig, truth: &Truth<'_>, seed: u64) -> Result<Replicate> {
    let x = uniform_design(cfg.n_total, cfg.d, derive_seed(seed, SEED_DESIGN))?;
    let mut noise = rng(derive_seed(seed, SEED_NOISE));
    let sd = cfg.omega.sqrt();
    let y: Vec<f64> = x
        .iter()
        .map(|p| truth.eval(p) + sd * noise.sample::<f64, _>(StandardNormal))
        .collect();
    let test_idx: Vec<usize> = (0..cfg.n_test).collect();
    let train_idx: Vec<usize> = (cfg.n_test..cfg.n_total).collect();
    Ok(Replicate {
        train: Dataset::new(
            x.select(&train_idx),
            train_idx.iter().map(|&i| y[i]).collect(),
            cfg.omega,
        )?,
        test_x: x.select(&test_idx),
        test_y: test_idx.iter().map(|&i| y[i]).collect(),
    })
}

fn lengthscale_of(model: &CovarianceModel) -> f64 {
    1.0 / a_of(model)
}

/// Golden-section minimization of `f` on [a, b].
fn golden_section<F: FnMut(f64) -> Result<f64>>(mut f: F, mut a: f64, mut b: f64, iterations: usize) -> Result<f64> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..iterations {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc <= fd { c } else { d })
}

/// Search range of the log multiplier used by the tuned method.
pub const TUNE_LOG_RANGE: f64 = 3.0;

/// Posterior predictive summary at one point; [lo, hi] is an
/// observation-level interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointPrediction {
    pub mean: f64,
    pub var: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Coverage of observation-level intervals from `post` on a held-out set.
fn coverage(post: &GpPosterior, x: &Points, y: &[f64], level: f64) -> Result<f64> {
    let preds = post.predict_many(x)?;
    let mut hits = 0usize;
    for (p, yi) in preds.iter().zip(y) {
        let (lo, hi) = post.interval(p, level)?;
        if lo <= *yi && *yi <= hi {
            hits += 1;
        }
    }
    Ok(hits as f64 / y.len() as f64)
}

/// `base` with its lengthscale multiplied by the constant m ∈
/// [e^{−3}, e^{3}] whose held-out coverage is closest to `level`, found by
/// golden-section search on ln m; among equal coverages the m nearest 1
/// wins. Returns the model and m.
pub fn tune_multiplier(
    base: &CovarianceModel,
    train: &Dataset,
    x: &Points,
    y: &[f64],
    level: f64,
    iterations: usize,
) -> Result<(CovarianceModel, f64)> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InvalidArgument(
            "tuning needs a non-empty held-out set with responses".into(),
        ));
    }
    let a0 = a_of(base);
    let at = |t: f64| model_at(base, a0 * (-t).exp());
    // The tie-break term is far below one coverage step 1/|x|, so it only
    // decides between multipliers with equal coverage, in favour of m = 1.
    let tie = 1e-3 / (x.len() as f64 * TUNE_LOG_RANGE);
    let t = golden_section(
        |t| Ok((coverage(&fit(train, &at(t)?)?, x, y, level)? - level).abs() + tie * t.abs()),
        -TUNE_LOG_RANGE,
        TUNE_LOG_RANGE,
        iterations,
    )?;
    Ok((at(t)?, t.exp()))
}

/// A fitted method, ready to predict.
#[derive(Debug)]
pub enum MethodFit {
    Gp(GpPosterior),
    Hier {
        chain: HierChain,
        template: CovarianceModel,
        train: Dataset,
        thin: usize,
    },
}

/// Outcome of [`fit_method`].
#[derive(Debug)]
pub struct FittedMethod {
    pub fit: MethodFit,
    /// φ, β or √c of the predictive model (posterior mean of 1/A for the
    /// hierarchical method).
    pub lengthscale: f64,
    pub sigma2: f64,
    pub acceptance_rate: Option<f64>,
    pub multiplier: Option<f64>,
}

impl FittedMethod {
    pub fn predict(&self, xs: &Points, level: f64) -> Result<Vec<PointPrediction>> {
        match &self.fit {
            MethodFit::Gp(post) => post
                .predict_many(xs)?
                .into_iter()
                .map(|p| {
                    let (lo, hi) = post.interval(&p, level)?;
                    Ok(PointPrediction {
                        mean: p.mean,
                        var: p.var,
                        lo,
                        hi,
                    })
                })
                .collect(),
            MethodFit::Hier {
                chain,
                template,
                train,
                thin,
            } => Ok(hier_predict(chain, train, template, xs, *thin, level)?
                .into_iter()
                .map(|p| PointPrediction {
                    mean: p.mean,
                    var: p.var,
                    lo: p.lo,
                    hi: p.hi,
                })
                .collect()),
        }
    }
}

/// Sets the covariance parameters of `model` on `train` as `method`
/// prescribes. `held_out` is required by the tuned method only; `seed`
/// drives the MH chain.
pub fn fit_method(
    method: &Method,
    model: &CovarianceModel,
    train: &Dataset,
    held_out: Option<(&Points, &[f64])>,
    level: f64,
    seed: u64,
) -> Result<FittedMethod> {
    let gp = |m: &CovarianceModel, multiplier: Option<f64>| -> Result<FittedMethod> {
        Ok(FittedMethod {
            fit: MethodFit::Gp(fit(train, m)?),
            lengthscale: lengthscale_of(m),
            sigma2: m.variance(),
            acceptance_rate: None,
            multiplier,
        })
    };
    match method {
        Method::Oracle => Err(Error::InvalidArgument(
            "the oracle method needs the true function".into(),
        )),
        Method::Mle { options } => gp(&mle_fit(train, model, None, options)?.model, None),
        Method::Rescaled { schedule, sigma2 } => {
            let ls = schedule.lengthscale(train.len())?;
            let m = model_at(model, 1.0 / ls)?;
            let m = match sigma2 {
                Some(s) => m.with_kernel(m.kernel.with_sigma2(*s)),
                None => {
                    let opts = MleOptions {
                        free: FreeParams::Sigma2Only,
                        ..MleOptions::default()
                    };
                    mle_fit(train, &m, None, &opts)?.model
                }
            };
            gp(&m, None)
        }
        Method::RescaledTuned { options, iterations } => {
            let (x, y) = held_out
                .ok_or_else(|| Error::InvalidArgument("the tuned method needs a held-out set with responses".into()))?;
            let base = mle_fit(train, model, None, options)?.model;
            let (m, mult) = tune_multiplier(&base, train, x, y, level, *iterations)?;
            gp(&m, Some(mult))
        }
        Method::Hierarchical { k, mh, thin, options } => {
            let template = mle_fit(train, model, None, options)?.model;
            let k_eff = if matches!(template.kernel, Kernel::SqExp(_)) {
                1.0
            } else {
                *k
            };
            let prior = HierPrior::new(k_eff, train.dim())?;
            let mh_cfg = MhConfig { seed, ..*mh };
            let chain = mh_sample(train, &template, &prior, &mh_cfg)?;
            chain.thinned(*thin)?;
            let lengthscale = chain.samples.iter().map(|a| 1.0 / a).sum::<f64>() / chain.samples.len() as f64;
            Ok(FittedMethod {
                lengthscale,
                sigma2: template.variance(),
                acceptance_rate: Some(chain.acceptance_rate),
                multiplier: None,
                fit: MethodFit::Hier {
                    chain,
                    template,
                    train: train.clone(),
                    thin: *thin,
                },
            })
        }
    }
}

fn run_method(
    cfg: &ScenarioConfig,
    truth: &Truth<'_>,
    rep: &Replicate,
    replicate: usize,
    seed: u64,
) -> Result<(MetricsRow, ReplicateInfo)> {
    let (means, intervals, info) = if let Method::Oracle = cfg.method {
        let means: Vec<f64> = rep.test_x.iter().map(|p| truth.eval(p)).collect();
        let intervals = means
            .iter()
            .map(|m| credible_interval(*m, 0.0, cfg.level, cfg.omega))
            .collect::<Result<Vec<_>>>()?;
        let info = ReplicateInfo {
            replicate,
            lengthscale: f64::NAN,
            sigma2: f64::NAN,
            acceptance_rate: None,
            multiplier: None,
        };
        (means, intervals, info)
    } else {
        let chain_seed = chain_seed_for(&cfg.method, seed);
        let f = fit_method(
            &cfg.method,
            &cfg.model,
            &rep.train,
            Some((&rep.test_x, &rep.test_y)),
            cfg.level,
            chain_seed,
        )?;
        let preds = f.predict(&rep.test_x, cfg.level)?;
        let info = ReplicateInfo {
            replicate,
            lengthscale: f.lengthscale,
            sigma2: f.sigma2,
            acceptance_rate: f.acceptance_rate,
            multiplier: f.multiplier,
        };
        (
            preds.iter().map(|p| p.mean).collect(),
            preds.iter().map(|p| (p.lo, p.hi)).collect(),
            info,
        )
    };
    let row = metrics(&means, &intervals, &rep.test_y)?;
    Ok((MetricsRow { replicate, ..row }, info))
}

fn chain_seed_for(method: &Method, rep_seed: u64) -> u64 {
    match method {
        Method::Hierarchical { mh, .. } => derive_seed(rep_seed, SEED_CHAIN ^ mh.seed.rotate_left(8)),
        _ => 0,
    }
}

/// Training set, held-out points and held-out responses of replicate r,
/// exactly as [`run_scenario`] draws them.
pub fn replicate_data(cfg: &ScenarioConfig, r: usize) -> Result<(Dataset, Points, Vec<f64>)> {
    cfg.validate()?;
    if cfg.truth == TruthSpec::User {
        return Err(Error::InvalidArgument("replicate_data needs a generated truth".into()));
    }
    let seed = derive_seed(cfg.seed, r as u64);
    let truth = draw_truth(&cfg.truth, cfg.d, derive_seed(seed, SEED_TRUTH))?;
    let rep = simulate_replicate(cfg, &truth, seed)?;
    Ok((rep.train, rep.test_x, rep.test_y))
}

/// Seed handed to [`fit_method`] for replicate r of `cfg`.
pub fn replicate_chain_seed(cfg: &ScenarioConfig, r: usize) -> u64 {
    chain_seed_for(&cfg.method, derive_seed(cfg.seed, r as u64))
}

/// Largest tolerated fraction of failed replicates.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

/// Runs every replicate of `cfg`; replicate r draws its truth, design and
/// noise from streams derived from (seed, r).
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    if cfg.truth == TruthSpec::User {
        return Err(Error::InvalidArgument(
            "a user truth must be passed to run_scenario_with_truth".into(),
        ));
    }
    run_inner(cfg, None)
}

/// A caller-supplied truth function.
pub type TruthFn = dyn Fn(&[f64]) -> f64 + Sync;

/// [`run_scenario`] with a caller-supplied truth function.
pub fn run_scenario_with_truth(cfg: &ScenarioConfig, truth: &TruthFn) -> Result<ScenarioReport> {
    run_inner(cfg, Some(truth))
}

fn run_inner(cfg: &ScenarioConfig, user: Option<&TruthFn>) -> Result<ScenarioReport> {
    cfg.validate()?;
    let outcomes: Vec<(usize, Result<(MetricsRow, ReplicateInfo)>)> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(cfg.seed, r as u64);
            let run = || -> Result<(MetricsRow, ReplicateInfo)> {
                let truth = match user {
                    Some(f) => Truth::User(f),
                    None => draw_truth(&cfg.truth, cfg.d, derive_seed(seed, SEED_TRUTH))?,
                };
                let rep = simulate_replicate(cfg, &truth, seed)?;
                run_method(cfg, &truth, &rep, r, seed)
            };
            (r, run())
        })
        .collect();
    let mut report = ScenarioReport {
        rows: Vec::new(),
        info: Vec::new(),
        failures: Vec::new(),
    };
    for (r, outcome) in outcomes {
        match outcome {
            Ok((row, info)) => {
                report.rows.push(row);
                report.info.push(info);
            }
            Err(e) => {
                log::warn!("replicate {r} failed: {e}");
                report.failures.push((r, e.to_string()));
            }
        }
    }
    let failed = report.failures.len() as f64 / cfg.replicates as f64;
    if failed > MAX_FAILURE_FRACTION {
        let first = &report.failures[0];
        return Err(Error::Scenario(format!(
            "{} of {} replicates failed; replicate {}: {}",
            report.failures.len(),
            cfg.replicates,
            first.0,
            first.1
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub n_grid: Vec<usize>,
    /// Replicate-averaged held-out RMSE of the posterior mean.
    pub rmse: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// −η/(2η+d).
    pub target: f64,
    /// Fitted slope is below target − 0.15.
    pub parametric_regime: bool,
}

/// Ordinary least squares of y on x: (slope, intercept, slope standard error).
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let se = if x.len() > 2 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    (slope, intercept, se)
}

pub const PARAMETRIC_MARGIN: f64 = 0.15;

/// Held-out RMSE of the rescaled posterior mean across training sizes.
///
/// `base.truth`, `base.omega`, `base.model` (its σ² stays fixed),
/// `base.n_test` and `base.seed` are used; `base.method` and `base.n_total`
/// are ignored. Replicate r shares its truth and test points across all n
/// and across schedules run with the same base seed.
pub fn empirical_rate(
    base: &ScenarioConfig,
    n_grid: &[usize],
    schedule: &RescalingSchedule,
    reps_per_n: usize,
) -> Result<RateReport> {
    if n_grid.len() < 4 || n_grid.windows(2).any(|w| w[1] <= w[0]) || n_grid[0] < 2 {
        return Err(Error::InvalidArgument(
            "n_grid must be strictly increasing with at least 4 sizes, all ≥ 2".into(),
        ));
    }
    if reps_per_n == 0 || base.n_test == 0 {
        return Err(Error::InvalidArgument(
            "need at least one replicate and one test point".into(),
        ));
    }
    if base.truth == TruthSpec::User {
        return Err(Error::InvalidArgument("empirical_rate needs a generated truth".into()));
    }
    schedule.validate()?;
    base.model.validate()?;
    let cells: Vec<(usize, usize)> = (0..n_grid.len())
        .flat_map(|i| (0..reps_per_n).map(move |r| (i, r)))
        .collect();
    let results: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&(i, r)| {
            let n = n_grid[i];
            let rep_seed = derive_seed(base.seed, r as u64);
            let truth = draw_truth(&base.truth, base.d, derive_seed(rep_seed, SEED_TRUTH))?;
            let test_x = uniform_design(base.n_test, base.d, derive_seed(rep_seed, SEED_TEST))?;
            let cell_seed = derive_seed(rep_seed, n as u64);
            let x = uniform_design(n, base.d, derive_seed(cell_seed, SEED_DESIGN))?;
            let mut noise = rng(derive_seed(cell_seed, SEED_NOISE));
            let sd = base.omega.sqrt();
            let y: Vec<f64> = x
                .iter()
                .map(|p| truth.eval(p) + sd * noise.sample::<f64, _>(StandardNormal))
                .collect();
            let data = Dataset::new(x, y, base.omega)?;
            let model = model_at(&base.model, 1.0 / schedule.lengthscale(n)?)?;
            let preds = fit(&data, &model)?.predict_many(&test_x)?;
            let err: Vec<f64> = preds
                .iter()
                .zip(test_x.iter())
                .map(|(p, x)| p.mean - truth.eval(x))
                .collect();
            Ok(empirical_norm(&err))
        })
        .collect();
    let mut rmse = vec![0.0; n_grid.len()];
    for (&(i, _), res) in cells.iter().zip(results) {
        rmse[i] += res? / reps_per_n as f64;
    }
    let lx: Vec<f64> = n_grid.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = rmse.iter().map(|r| r.ln()).collect();
    let (slope, intercept, slope_se) = fit_line(&lx, &ly);
    let target = -schedule.eta / (2.0 * schedule.eta + schedule.d as f64);
    Ok(RateReport {
        n_grid: n_grid.to_vec(),
        rmse,
        slope,
        intercept,
        slope_se,
        target,
        parametric_regime: slope < target - PARAMETRIC_MARGIN,
    })
}
