//! Stationary covariance kernels: Matérn, confluent hypergeometric (CH) and
//! squared exponential, under Euclidean or Mahalanobis distance.

mod anisotropy;
mod spectral;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::points::Points;
use crate::specfun::quadrature::ln_integrate_unimodal;
use crate::specfun::{ln_bessel_k_unchecked, ln_gamma_unchecked, ln_hyper_u, QuadratureConfig};

pub use anisotropy::AnisotropyMatrix;
pub use spectral::{
    aniso_spectral, ch_spectral, matern_spectral, matern_spectral_shape, spectral_sandwich_constant, sqexp_spectral,
};

/// Lags below this are treated as exactly zero.
pub const DIST_EPS: f64 = 1e-14;

const LN_2: f64 = std::f64::consts::LN_2;
const MIXTURE_DROP: f64 = 46.0;

fn positive(func: &'static str, name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(domain(func, format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_lag(func: &'static str, h: f64) -> Result<()> {
    if h >= 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(domain(func, format!("lag must be finite and non-negative, got {h}")))
    }
}

/// M(h) = σ² 2^{1−v}/Γ(v) (√(2v) h/φ)^v K_v(√(2v) h/φ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub v: f64,
    pub phi: f64,
    pub sigma2: f64,
}

impl MaternParams {
    pub fn new(v: f64, phi: f64, sigma2: f64) -> Result<Self> {
        let p = Self { v, phi, sigma2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        positive("matern", "v", self.v)?;
        positive("matern", "phi", self.phi)?;
        positive("matern", "sigma2", self.sigma2)
    }
}

/// C(h) = σ² Γ(v+α)/Γ(v) U(α, 1−v, v (h/β)²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChParams {
    pub v: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sigma2: f64,
}

impl ChParams {
    pub fn new(v: f64, alpha: f64, beta: f64, sigma2: f64) -> Result<Self> {
        let p = Self { v, alpha, beta, sigma2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        positive("ch", "v", self.v)?;
        positive("ch", "alpha", self.alpha)?;
        positive("ch", "beta", self.beta)?;
        positive("ch", "sigma2", self.sigma2)
    }
}

/// σ² exp(−h²/c).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqExpParams {
    pub c: f64,
    pub sigma2: f64,
}

impl SqExpParams {
    pub fn new(c: f64, sigma2: f64) -> Result<Self> {
        let p = Self { c, sigma2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        positive("sqexp", "c", self.c)?;
        positive("sqexp", "sigma2", self.sigma2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Kernel {
    Matern(MaternParams),
    Ch(ChParams),
    SqExp(SqExpParams),
}

impl Kernel {
    pub fn validate(&self) -> Result<()> {
        match self {
            Kernel::Matern(p) => p.validate(),
            Kernel::Ch(p) => p.validate(),
            Kernel::SqExp(p) => p.validate(),
        }
    }

    pub fn sigma2(&self) -> f64 {
        match self {
            Kernel::Matern(p) => p.sigma2,
            Kernel::Ch(p) => p.sigma2,
            Kernel::SqExp(p) => p.sigma2,
        }
    }

    pub fn with_sigma2(mut self, sigma2: f64) -> Self {
        match &mut self {
            Kernel::Matern(p) => p.sigma2 = sigma2,
            Kernel::Ch(p) => p.sigma2 = sigma2,
            Kernel::SqExp(p) => p.sigma2 = sigma2,
        }
        self
    }

    /// Smoothness v; `None` for the squared exponential.
    pub fn smoothness(&self) -> Option<f64> {
        match self {
            Kernel::Matern(p) => Some(p.v),
            Kernel::Ch(p) => Some(p.v),
            Kernel::SqExp(_) => None,
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            Kernel::Matern(_) => "matern",
            Kernel::Ch(_) => "ch",
            Kernel::SqExp(_) => "sq_exp",
        }
    }
}

/// A kernel together with its distance: Euclidean when `anisotropy` is
/// `None`, otherwise sqrt(hᵀBh). With B = I/φ² and unit kernel lengthscale
/// the anisotropic model coincides with the isotropic one at lengthscale φ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel {
    pub kernel: Kernel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anisotropy: Option<AnisotropyMatrix>,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
}

impl CovarianceModel {
    pub fn isotropic(kernel: Kernel) -> Self {
        Self {
            kernel,
            anisotropy: None,
            quadrature: QuadratureConfig::default(),
        }
    }

    pub fn anisotropic(kernel: Kernel, b: AnisotropyMatrix) -> Self {
        Self {
            kernel,
            anisotropy: Some(b),
            quadrature: QuadratureConfig::default(),
        }
    }

    pub fn matern(v: f64, phi: f64, sigma2: f64) -> Result<Self> {
        Ok(Self::isotropic(Kernel::Matern(MaternParams::new(v, phi, sigma2)?)))
    }

    pub fn ch(v: f64, alpha: f64, beta: f64, sigma2: f64) -> Result<Self> {
        Ok(Self::isotropic(Kernel::Ch(ChParams::new(v, alpha, beta, sigma2)?)))
    }

    pub fn sqexp(c: f64, sigma2: f64) -> Result<Self> {
        Ok(Self::isotropic(Kernel::SqExp(SqExpParams::new(c, sigma2)?)))
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.quadrature.validate()
    }

    /// cov(0) = σ².
    pub fn variance(&self) -> f64 {
        self.kernel.sigma2()
    }

    pub fn with_kernel(&self, kernel: Kernel) -> Self {
        Self {
            kernel,
            anisotropy: self.anisotropy.clone(),
            quadrature: self.quadrature,
        }
    }

    /// Distance between two points under this model's geometry.
    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        match &self.anisotropy {
            Some(b) => aniso_distance(x, y, b),
            None => Ok(euclidean(x, y)),
        }
    }

    /// Covariance as a function of the (Euclidean or Mahalanobis) lag.
    pub fn cov_lag(&self, h: f64) -> Result<f64> {
        check_lag("cov_lag", h)?;
        self.evaluator()?.at_lag(h)
    }

    pub fn cov(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.evaluator()?.cov(x, y)
    }

    /// Validates once and returns an evaluator with the kernel constants
    /// precomputed.
    pub fn evaluator(&self) -> Result<CovEvaluator<'_>> {
        self.validate()?;
        Ok(CovEvaluator {
            kernel: KernelEval::new(&self.kernel, self.quadrature),
            anisotropy: self.anisotropy.as_ref(),
        })
    }

    /// Spectral density at frequency vector `lam`, with
    /// cov(h) = ∫ e^{−i⟨λ,h⟩} m(λ) dλ.
    pub fn spectral_density(&self, lam: &[f64]) -> Result<f64> {
        spectral::model_spectral(self, lam)
    }
}

fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    let s: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let h = s.sqrt();
    if h < DIST_EPS {
        0.0
    } else {
        h
    }
}

/// sqrt((x−y)ᵀB(x−y)), clamped to zero below [`DIST_EPS`].
pub fn aniso_distance(x: &[f64], y: &[f64], b: &AnisotropyMatrix) -> Result<f64> {
    if x.len() != b.dim() || y.len() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: b.dim(),
            found: if x.len() != b.dim() { x.len() } else { y.len() },
        });
    }
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, c)| a - c).collect();
    let h = b.quad_form(&diff).sqrt();
    Ok(if h < DIST_EPS { 0.0 } else { h })
}

#[derive(Debug, Clone, Copy)]
enum KernelEval {
    Matern {
        v: f64,
        inv_len: f64,
        sigma2: f64,
        ln_pref: f64,
    },
    Ch {
        v: f64,
        alpha: f64,
        c_scale: f64,
        sigma2: f64,
        ln_pref: f64,
        cfg: QuadratureConfig,
    },
    SqExp {
        inv_c: f64,
        sigma2: f64,
    },
}

impl KernelEval {
    fn new(k: &Kernel, cfg: QuadratureConfig) -> Self {
        match *k {
            Kernel::Matern(p) => KernelEval::Matern {
                v: p.v,
                inv_len: (2.0 * p.v).sqrt() / p.phi,
                sigma2: p.sigma2,
                ln_pref: p.sigma2.ln() + (1.0 - p.v) * LN_2 - ln_gamma_unchecked(p.v),
            },
            Kernel::Ch(p) => KernelEval::Ch {
                v: p.v,
                alpha: p.alpha,
                c_scale: p.v / (p.beta * p.beta),
                sigma2: p.sigma2,
                ln_pref: p.sigma2.ln() + ln_gamma_unchecked(p.v + p.alpha) - ln_gamma_unchecked(p.v),
                cfg,
            },
            Kernel::SqExp(p) => KernelEval::SqExp {
                inv_c: 1.0 / p.c,
                sigma2: p.sigma2,
            },
        }
    }

    /// Kernels whose pointwise evaluation needs quadrature or a Bessel
    /// function.
    fn tabulable(&self) -> bool {
        match *self {
            KernelEval::Ch { .. } => true,
            KernelEval::Matern { v, .. } => !is_closed_form_matern(v),
            KernelEval::SqExp { .. } => false,
        }
    }

    /// ln k(h) for h > 0, finite even where k(h) underflows.
    fn ln_at(&self, h: f64) -> Result<f64> {
        match *self {
            KernelEval::Matern {
                v, inv_len, ln_pref, ..
            } => {
                let s = inv_len * h;
                Ok(ln_pref + v * s.ln() + ln_bessel_k_unchecked(v, s))
            }
            KernelEval::Ch {
                v,
                alpha,
                c_scale,
                ln_pref,
                cfg,
                ..
            } => Ok(ln_pref + ln_hyper_u(alpha, 1.0 - v, c_scale * h * h, &cfg)?),
            _ => Ok(self.at(h)?.ln()),
        }
    }

    fn at(&self, h: f64) -> Result<f64> {
        if h < DIST_EPS {
            return Ok(match *self {
                KernelEval::Matern { sigma2, .. }
                | KernelEval::Ch { sigma2, .. }
                | KernelEval::SqExp { sigma2, .. } => sigma2,
            });
        }
        match *self {
            KernelEval::Matern {
                v,
                inv_len,
                sigma2,
                ln_pref,
            } => Ok(matern_scaled(v, inv_len * h, sigma2, ln_pref)),
            KernelEval::Ch {
                v,
                alpha,
                c_scale,
                sigma2,
                ln_pref,
                cfg,
            } => {
                let c = c_scale * h * h;
                if c == 0.0 {
                    return Ok(sigma2);
                }
                Ok((ln_pref + ln_hyper_u(alpha, 1.0 - v, c, &cfg)?).exp())
            }
            KernelEval::SqExp { inv_c, sigma2 } => Ok(sigma2 * (-h * h * inv_c).exp()),
        }
    }
}

fn is_closed_form_matern(v: f64) -> bool {
    v == 0.5 || v == 1.5 || v == 2.5
}

/// Matérn at scaled lag s = √(2v)h/φ > 0.
fn matern_scaled(v: f64, s: f64, sigma2: f64, ln_pref: f64) -> f64 {
    if v == 0.5 {
        sigma2 * (-s).exp()
    } else if v == 1.5 {
        sigma2 * (1.0 + s) * (-s).exp()
    } else if v == 2.5 {
        sigma2 * (1.0 + s + s * s / 3.0) * (-s).exp()
    } else if s > UNDERFLOW_S
        && ln_pref + v * s.ln() - s + 0.5 * (std::f64::consts::FRAC_PI_2 / s).ln() + v * v / s < -746.0
    {
        // ln K_v(s) ≤ ln √(π/2s) − s + v²/s, so the value underflows.
        0.0
    } else {
        (ln_pref + v * s.ln() + ln_bessel_k_unchecked(v, s)).exp()
    }
}

const UNDERFLOW_S: f64 = 600.0;

/// A validated model with precomputed kernel constants.
#[derive(Debug, Clone, Copy)]
pub struct CovEvaluator<'a> {
    kernel: KernelEval,
    anisotropy: Option<&'a AnisotropyMatrix>,
}

impl CovEvaluator<'_> {
    pub fn at_lag(&self, h: f64) -> Result<f64> {
        self.kernel.at(h)
    }

    pub fn cov(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.kernel.at(self.distance(x, y)?)
    }

    /// Euclidean or Mahalanobis lag, as the model prescribes.
    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        Ok(match self.anisotropy {
            Some(b) => aniso_distance(x, y, b)?,
            None => euclidean(x, y),
        })
    }

    /// Replaces every lag in `lags` by the covariance at that lag. Large
    /// batches of CH or Bessel-form Matérn lags go through [`LagTable`];
    /// everything else is evaluated exactly.
    pub fn cov_of_lags(&self, lags: &mut [f64]) -> Result<()> {
        if self.kernel.tabulable() {
            if let Some(t) = LagTable::for_lags(&self.kernel, lags)? {
                for h in lags.iter_mut() {
                    *h = t.eval(&self.kernel, *h)?;
                }
                return Ok(());
            }
        }
        for h in lags.iter_mut() {
            *h = self.kernel.at(*h)?;
        }
        Ok(())
    }
}

/// Batches smaller than this are always evaluated exactly.
pub const LAG_TABLE_MIN_LAGS: usize = 1024;

/// Grid spacing of [`LagTable`] in ln h.
pub const LAG_TABLE_STEP: f64 = 1.0 / 128.0;

/// ln k tabulated on a uniform grid in ln h and read back by four-point
/// Lagrange interpolation. Relative error is below 1e-8 on the tested
/// parameter range (see the unit tests); used only when it saves at least
/// a factor of four in kernel evaluations. Values that underflow f64 come
/// back as 0, matching the exact path up to the Gram flush.
struct LagTable {
    ln_h0: f64,
    ln_k: Vec<f64>,
}

impl LagTable {
    fn for_lags(kernel: &KernelEval, lags: &[f64]) -> Result<Option<Self>> {
        if lags.len() < LAG_TABLE_MIN_LAGS {
            return Ok(None);
        }
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for &h in lags {
            if h >= DIST_EPS {
                lo = lo.min(h);
                hi = hi.max(h);
            }
        }
        if !(hi > 0.0) {
            return Ok(None);
        }
        let span = (hi / lo).ln();
        // One node below and two above the covered range keep every
        // stencil inside the table.
        let nodes = (span / LAG_TABLE_STEP).ceil() as usize + 4;
        if 4 * nodes > lags.len() {
            return Ok(None);
        }
        let ln_h0 = lo.ln() - LAG_TABLE_STEP;
        let ln_k = (0..nodes)
            .map(|i| kernel.ln_at((ln_h0 + i as f64 * LAG_TABLE_STEP).exp()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(Self { ln_h0, ln_k }))
    }

    fn eval(&self, kernel: &KernelEval, h: f64) -> Result<f64> {
        if h < DIST_EPS {
            return kernel.at(h);
        }
        let t = (h.ln() - self.ln_h0) / LAG_TABLE_STEP;
        let i = (t.floor() as usize).clamp(1, self.ln_k.len() - 3);
        let u = t - i as f64;
        let f = &self.ln_k[i - 1..i + 3];
        // Nodes at −1, 0, 1, 2 relative to i.
        let (a, b, c, d) = (u + 1.0, u, u - 1.0, u - 2.0);
        let v = -f[0] * b * c * d / 6.0 + f[1] * a * c * d / 2.0 - f[2] * a * b * d / 2.0 + f[3] * a * b * c / 6.0;
        Ok(v.exp())
    }
}

pub fn matern_cov(h: f64, p: &MaternParams) -> Result<f64> {
    p.validate()?;
    check_lag("matern_cov", h)?;
    KernelEval::new(&Kernel::Matern(*p), QuadratureConfig::default()).at(h)
}

pub fn ch_cov(h: f64, p: &ChParams) -> Result<f64> {
    ch_cov_with(h, p, &QuadratureConfig::default())
}

pub fn ch_cov_with(h: f64, p: &ChParams, cfg: &QuadratureConfig) -> Result<f64> {
    p.validate()?;
    cfg.validate()?;
    check_lag("ch_cov", h)?;
    KernelEval::new(&Kernel::Ch(*p), *cfg).at(h)
}

pub fn sqexp_cov(h: f64, p: &SqExpParams) -> Result<f64> {
    p.validate()?;
    check_lag("sqexp_cov", h)?;
    KernelEval::new(&Kernel::SqExp(*p), QuadratureConfig::default()).at(h)
}

/// CH covariance as a scale mixture of Matérn kernels: φ² follows an
/// inverse gamma law with shape α and scale β²/2, evaluated as an integral
/// over y = β²/(2φ²) ~ Gamma(α, 1) in log coordinates. Independent of the
/// U-function route used by [`ch_cov`].
pub fn ch_mixture_oracle(h: f64, p: &ChParams, cfg: &QuadratureConfig) -> Result<f64> {
    p.validate()?;
    cfg.validate()?;
    check_lag("ch_mixture_oracle", h)?;
    let ChParams { v, alpha, beta, sigma2 } = *p;
    let ln_gamma_alpha = ln_gamma_unchecked(alpha);
    let ln_pref = sigma2.ln() + (1.0 - v) * LN_2 - ln_gamma_unchecked(v);
    // s = √(2v)·h/φ with φ = β/√(2y), so s = 2h√(v·y)/β.
    let s_coef = 2.0 * h * v.sqrt() / beta;
    let lg = |w: f64| {
        let ln_density = alpha * w - w.exp() - ln_gamma_alpha;
        let s = s_coef * (0.5 * w).exp();
        let ln_m = if s < DIST_EPS {
            sigma2.ln()
        } else if s.is_infinite() {
            f64::NEG_INFINITY
        } else {
            ln_pref + v * s.ln() + ln_bessel_k_unchecked(v, s)
        };
        ln_density + ln_m
    };
    Ok(ln_integrate_unimodal(lg, alpha.ln(), MIXTURE_DROP, cfg)?.exp())
}

/// Off-diagonal Gram entries below σ²·GRAM_FLUSH are stored as zero.
pub const GRAM_FLUSH: f64 = 1e-150;

/// Gram matrix K[i][j] = cov(xᵢ, xⱼ) + noise·1{i=j}.
pub fn cov_matrix(points: &Points, model: &CovarianceModel, noise: f64) -> Result<DMatrix<f64>> {
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise variance must be ≥ 0, got {noise}"
        )));
    }
    check_geometry(points.dim(), model)?;
    let ev = model.evaluator()?;
    let n = points.len();
    let floor = model.variance() * GRAM_FLUSH;
    let mut lags = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for j in 0..n {
        let xj = points.row(j);
        for i in 0..j {
            lags.push(ev.distance(points.row(i), xj)?);
        }
    }
    ev.cov_of_lags(&mut lags)?;
    let mut k = DMatrix::zeros(n, n);
    let mut next = lags.into_iter();
    for j in 0..n {
        for i in 0..j {
            let mut c = next.next().expect("one lag per pair");
            if !c.is_finite() {
                return Err(Error::NonFinite(format!("covariance entry ({i}, {j}) is {c}")));
            }
            if c.abs() < floor {
                c = 0.0;
            }
            k[(i, j)] = c;
            k[(j, i)] = c;
        }
        k[(j, j)] = ev.at_lag(0.0)? + noise;
    }
    Ok(k)
}

/// Cross-covariance vector between `train` and one point `x`.
pub fn cross_cov(train: &Points, x: &[f64], ev: &CovEvaluator<'_>) -> Result<DVector<f64>> {
    if x.len() != train.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            found: x.len(),
        });
    }
    let mut out = DVector::zeros(train.len());
    for (i, xi) in train.iter().enumerate() {
        out[i] = ev.cov(xi, x)?;
    }
    Ok(out)
}

pub(crate) fn check_geometry(dim: usize, model: &CovarianceModel) -> Result<()> {
    match &model.anisotropy {
        Some(b) if b.dim() != dim => Err(Error::DimensionMismatch {
            expected: b.dim(),
            found: dim,
        }),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn matern_examples() {
        let p = MaternParams::new(0.5, 1.0, 1.0).unwrap();
        assert!((matern_cov(1.0, &p).unwrap() - (-1f64).exp()).abs() < 1e-15);
        let p = MaternParams::new(2.0, 1.0, 1.0).unwrap();
        assert!(rel(matern_cov(1.0, &p).unwrap(), 0.507519509132111725874636763936) < 1e-12);
        assert_eq!(matern_cov(0.0, &p).unwrap(), 1.0);
        // Closed forms agree with the Bessel route.
        for v in [1.5, 2.5] {
            let p = MaternParams::new(v, 0.7, 2.0).unwrap();
            let ln_pref = p.sigma2.ln() + (1.0 - v) * LN_2 - ln_gamma_unchecked(v);
            for s in [1e-6, 0.3, 1.0, 4.0, 40.0] {
                let closed = matern_scaled(v, s, p.sigma2, ln_pref);
                let bessel = (ln_pref + v * s.ln() + ln_bessel_k_unchecked(v, s)).exp();
                assert!(rel(closed, bessel) < 1e-12, "v={v} s={s}");
            }
        }
    }

    #[test]
    fn matern_small_lag_is_continuous() {
        let p = MaternParams::new(7.3, 0.2, 1.5).unwrap();
        let near = matern_cov(1e-9, &p).unwrap();
        assert!(rel(near, 1.5) < 1e-9);
    }

    #[test]
    fn ch_examples() {
        let p = ChParams::new(1.0, 3.0, 1.0, 1.0).unwrap();
        assert_eq!(ch_cov(0.0, &p).unwrap(), 1.0);
        let c1 = ch_cov(1.0, &p).unwrap();
        let c2 = ch_cov(2.0, &p).unwrap();
        assert!(rel(c1, 0.1237421448992385167829897541) < 1e-10);
        assert!(rel(c2, 0.0162002091028633546117901833291) < 1e-10);
        assert!(c2 < c1);
        assert!(rel(ch_cov(1e-9, &p).unwrap(), 1.0) < 1e-8);
    }

    #[test]
    fn ch_agrees_with_mixture() {
        let cfg = QuadratureConfig::default();
        let cases = [
            (1.0, ChParams::new(0.5, 2.0, 1.0, 1.0).unwrap(), 0.18864091516240306),
            (3.0, ChParams::new(1.5, 4.0, 0.5, 2.0).unwrap(), 9.564255803752476e-6),
        ];
        for (h, p, want) in cases {
            let mix = ch_mixture_oracle(h, &p, &cfg).unwrap();
            let direct = ch_cov(h, &p).unwrap();
            assert!(rel(mix, want) < 1e-9, "mixture {mix} vs {want}");
            assert!(rel(direct, want) < 1e-9, "direct {direct} vs {want}");
        }
        let p = ChParams::new(2.2, 0.7, 3.0, 4.0).unwrap();
        assert!((ch_mixture_oracle(0.0, &p, &cfg).unwrap() - 4.0).abs() < 1e-8 * 4.0);
    }

    #[test]
    fn sqexp_examples() {
        let p = SqExpParams::new(4.0, 3.0).unwrap();
        assert!((sqexp_cov(2.0, &p).unwrap() - 3.0 * (-1f64).exp()).abs() < 1e-15);
        assert_eq!(sqexp_cov(0.0, &SqExpParams::new(1.0, 1.0).unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn domain_errors() {
        assert!(MaternParams::new(0.0, 1.0, 1.0).is_err());
        assert!(ChParams::new(1.0, -1.0, 1.0, 1.0).is_err());
        assert!(matern_cov(-1.0, &MaternParams::new(1.0, 1.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn aniso_distance_examples() {
        let b = AnisotropyMatrix::diagonal(&[4.0, 1.0]).unwrap();
        assert_eq!(aniso_distance(&[1.0, 0.0], &[0.0, 0.0], &b).unwrap(), 2.0);
        let i = AnisotropyMatrix::identity(2).unwrap();
        assert_eq!(aniso_distance(&[1.0, 0.0], &[0.0, 0.0], &i).unwrap(), 1.0);
        assert_eq!(aniso_distance(&[0.3, 0.2], &[0.3, 0.2], &b).unwrap(), 0.0);
        assert!(aniso_distance(&[1.0], &[0.0, 0.0], &b).is_err());
    }

    #[test]
    fn gram_matrix_shapes() {
        let m = CovarianceModel::matern(1.5, 0.3, 2.0).unwrap();
        let one = Points::from_1d(&[0.4]).unwrap();
        let k = cov_matrix(&one, &m, 0.5).unwrap();
        assert_eq!(k[(0, 0)], 2.5);
        let twins = Points::from_1d(&[0.4, 0.4]).unwrap();
        let k = cov_matrix(&twins, &m, 0.0).unwrap();
        assert!(k.iter().all(|&v| v == 2.0));
        let pts = Points::from_1d(&[0.1, 0.5, 0.52, 0.9, 0.33]).unwrap();
        let k = cov_matrix(&pts, &m, 0.0).unwrap();
        assert_eq!(k, k.transpose());
        assert!(k.cholesky().is_some());
    }

    #[test]
    fn ch_lag_table_matches_exact() {
        let cfg = QuadratureConfig::default();
        let mut worst = 0.0f64;
        for &v in &[0.5, 2.0, 5.0, 10.0] {
            for &alpha in &[0.05, 1.0, 5.0] {
                for &beta in &[0.03, 1.0] {
                    let k = KernelEval::new(&Kernel::Ch(ChParams::new(v, alpha, beta, 1.3).unwrap()), cfg);
                    let lags: Vec<f64> = (0..20000).map(|i| 1e-4 * (1.00042f64).powi(i)).collect();
                    let table = LagTable::for_lags(&k, &lags).unwrap().expect("table pays off");
                    for h in lags.iter().step_by(181) {
                        let exact = k.at(*h).unwrap();
                        if exact > 1e-280 {
                            worst = worst.max(rel(table.eval(&k, *h).unwrap(), exact));
                        }
                    }
                }
            }
        }
        assert!(worst < 1e-8, "worst relative error {worst:e}");
    }

    #[test]
    fn matern_lag_table_matches_exact() {
        let cfg = QuadratureConfig::default();
        let mut worst = 0.0f64;
        for &v in &[0.3, 1.0, 2.0, 5.0, 6.0, 10.0] {
            for &phi in &[0.01, 0.3, 2.0] {
                let k = KernelEval::new(&Kernel::Matern(MaternParams::new(v, phi, 0.7).unwrap()), cfg);
                assert!(k.tabulable());
                let lags: Vec<f64> = (0..20000).map(|i| 1e-5 * (1.0005f64).powi(i)).collect();
                let table = LagTable::for_lags(&k, &lags).unwrap().expect("table pays off");
                for h in lags.iter().step_by(143) {
                    let exact = k.at(*h).unwrap();
                    if exact > 1e-280 {
                        worst = worst.max(rel(table.eval(&k, *h).unwrap(), exact));
                    }
                }
            }
        }
        assert!(worst < 1e-8, "worst relative error {worst:e}");
    }

    #[test]
    fn ch_gram_uses_exact_values_up_to_table_error() {
        let pts = Points::new(2, (0..240).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect()).unwrap();
        let m = CovarianceModel::ch(2.5, 1.5, 0.4, 2.0).unwrap();
        let k = cov_matrix(&pts, &m, 0.1).unwrap();
        let ev = m.evaluator().unwrap();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let exact = ev.cov(pts.row(i), pts.row(j)).unwrap() + if i == j { 0.1 } else { 0.0 };
                assert!(rel(k[(i, j)], exact) < 1e-8, "({i}, {j})");
            }
        }
    }
}
