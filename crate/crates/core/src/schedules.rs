//! Sample-size-driven lengthscale schedules and the conditions under which
//! the rescaled and hierarchical priors contract at the minimax rate.

use serde::{Deserialize, Serialize};

use crate::covariance::AnisotropyMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleFamily {
    Matern,
    Ch,
    Anisotropic,
}

/// Which power of n the schedule uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", content = "exponent", rename_all = "snake_case")]
pub enum ExponentRule {
    /// (v−η)/((2η+d)v).
    #[default]
    Theory,
    /// Twice the theory exponent: a lengthscale that shrinks too fast.
    Doubled,
    /// A user-supplied exponent.
    Fixed(f64),
}

fn default_multiplier() -> f64 {
    1.0
}

fn default_alpha_constant() -> f64 {
    10.0
}

/// Lengthscale schedule multiplier·n^{−e}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescalingSchedule {
    pub family: ScheduleFamily,
    pub v: f64,
    pub eta: f64,
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub exponent: ExponentRule,
    #[serde(default = "default_multiplier")]
    pub multiplier: f64,
    /// C in the growth bound α ≤ C·sqrt(ln ln n).
    #[serde(default = "default_alpha_constant")]
    pub alpha_constant: f64,
}

impl RescalingSchedule {
    pub fn matern(v: f64, eta: f64, d: usize) -> Result<Self> {
        Self::build(ScheduleFamily::Matern, v, eta, d, None)
    }

    pub fn ch(v: f64, eta: f64, d: usize, alpha: f64) -> Result<Self> {
        Self::build(ScheduleFamily::Ch, v, eta, d, Some(alpha))
    }

    pub fn anisotropic(v: f64, eta: f64, d: usize) -> Result<Self> {
        Self::build(ScheduleFamily::Anisotropic, v, eta, d, None)
    }

    fn build(family: ScheduleFamily, v: f64, eta: f64, d: usize, alpha: Option<f64>) -> Result<Self> {
        let s = Self {
            family,
            v,
            eta,
            d,
            alpha,
            exponent: ExponentRule::Theory,
            multiplier: 1.0,
            alpha_constant: 10.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_rule(mut self, rule: ExponentRule) -> Self {
        self.exponent = rule;
        self
    }

    pub fn with_multiplier(mut self, m: f64) -> Self {
        self.multiplier = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::Schedule(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.v.is_finite()) || self.v < self.eta {
            return Err(Error::Schedule(format!(
                "smoothness v = {} is below the regularity eta = {}",
                self.v, self.eta
            )));
        }
        if self.d == 0 {
            return Err(Error::Schedule("dimension must be at least 1".into()));
        }
        if !(self.multiplier > 0.0) || !self.multiplier.is_finite() {
            return Err(Error::Schedule(format!(
                "multiplier must be positive, got {}",
                self.multiplier
            )));
        }
        if let ExponentRule::Fixed(e) = self.exponent {
            if !e.is_finite() {
                return Err(Error::Schedule(format!("fixed exponent must be finite, got {e}")));
            }
        }
        Ok(())
    }

    /// (v−η)/((2η+d)v).
    pub fn theory_exponent(&self) -> f64 {
        (self.v - self.eta) / ((2.0 * self.eta + self.d as f64) * self.v)
    }

    /// The exponent e actually used.
    pub fn exponent(&self) -> f64 {
        match self.exponent {
            ExponentRule::Theory => self.theory_exponent(),
            ExponentRule::Doubled => 2.0 * self.theory_exponent(),
            ExponentRule::Fixed(e) => e,
        }
    }

    /// multiplier·n^{−e}.
    pub fn lengthscale(&self, n: usize) -> Result<f64> {
        self.validate()?;
        check_n(n)?;
        Ok(self.multiplier * (n as f64).powf(-self.exponent()))
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        Err(Error::Schedule(format!("sample size must be at least 2, got {n}")))
    } else {
        Ok(())
    }
}

/// φ_n for the rescaled Matérn prior.
pub fn rescale_matern(n: usize, s: &RescalingSchedule) -> Result<f64> {
    s.lengthscale(n)
}

/// Warning text when α exceeds C·sqrt(ln ln n).
pub fn ch_alpha_warning(n: usize, s: &RescalingSchedule) -> Option<String> {
    let alpha = s.alpha?;
    let lnln = (n as f64).ln().ln();
    let bound = if lnln > 0.0 {
        s.alpha_constant * lnln.sqrt()
    } else {
        0.0
    };
    (alpha > bound).then(|| {
        format!(
            "alpha = {alpha} exceeds {}·sqrt(ln ln {n}) = {bound:.4}; the CH rate guarantee assumes it does not",
            s.alpha_constant
        )
    })
}

/// β_n for the rescaled CH prior. Requires α > d/2 + 1 and logs a warning
/// when α outgrows C·sqrt(ln ln n).
pub fn rescale_ch(n: usize, s: &RescalingSchedule) -> Result<f64> {
    let alpha = s
        .alpha
        .ok_or_else(|| Error::Schedule("CH schedule needs alpha".into()))?;
    let floor = s.d as f64 / 2.0 + 1.0;
    if !(alpha > floor) {
        return Err(Error::Condition(format!(
            "alpha = {alpha} must exceed d/2 + 1 = {floor}"
        )));
    }
    let beta = s.lengthscale(n)?;
    if let Some(w) = ch_alpha_warning(n, s) {
        log::warn!("{w}");
    }
    Ok(beta)
}

/// λ_max = n^{e}/multiplier for an anisotropy matrix whose shape is fixed by
/// `unit`; returns the value together with the rescaled matrix. Fails when
/// the eigenvalue ratio of `unit` is below `ratio_floor`.
pub fn rescale_aniso(
    n: usize,
    s: &RescalingSchedule,
    unit: &AnisotropyMatrix,
    ratio_floor: f64,
) -> Result<(f64, AnisotropyMatrix)> {
    if !(ratio_floor > 0.0) {
        return Err(Error::Schedule(format!(
            "eigenvalue ratio floor must be positive, got {ratio_floor}"
        )));
    }
    if unit.dim() != s.d {
        return Err(Error::DimensionMismatch {
            expected: s.d,
            found: unit.dim(),
        });
    }
    let ratio = unit.eigen_ratio();
    if ratio < ratio_floor {
        return Err(Error::Condition(format!(
            "lambda_min/lambda_max = {ratio:.6} is below the required floor {ratio_floor}"
        )));
    }
    let lambda_max = 1.0 / s.lengthscale(n)?;
    let b = unit.with_lambda_max(lambda_max)?;
    Ok((lambda_max, b))
}

/// n^{−η/(2η+d)}.
pub fn minimax_rate(n: usize, eta: f64, d: usize) -> f64 {
    (n as f64).powf(-eta / (2.0 * eta + d as f64))
}

/// Gamma(1,1) prior on A^{kd} for A = 1/lengthscale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierConfig {
    pub v: f64,
    pub k: f64,
    pub d: usize,
}

impl HierConfig {
    /// Polynomial exponent p = kd − 1 of the induced density envelope.
    pub fn p(&self) -> f64 {
        self.k * self.d as f64 - 1.0
    }
}

/// One failed inequality `lhs op rhs`, with both sides evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub condition: &'static str,
    pub lhs: f64,
    pub rhs: f64,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} violated: {} vs {}", self.condition, self.lhs, self.rhs)
    }
}

/// Checks v > (1+d/2)(η+d/2) and k ≥ (v+d/2)/(v − (1+d/2)(η+d/2)).
pub fn check_hier_conditions(cfg: &HierConfig, eta: f64) -> std::result::Result<(), Vec<Violation>> {
    let hd = cfg.d as f64 / 2.0;
    let threshold = (1.0 + hd) * (eta + hd);
    let mut out = Vec::new();
    if !(cfg.v > threshold) {
        out.push(Violation {
            condition: "v > (1+d/2)(eta+d/2)",
            lhs: cfg.v,
            rhs: threshold,
        });
    }
    let k_floor = if cfg.v > threshold {
        (cfg.v + hd) / (cfg.v - threshold)
    } else {
        f64::INFINITY
    };
    if !(cfg.k >= k_floor) {
        out.push(Violation {
            condition: "k >= (v+d/2)/(v-(1+d/2)(eta+d/2))",
            lhs: cfg.k,
            rhs: k_floor,
        });
    }
    if cfg.k < 1.0 {
        out.push(Violation {
            condition: "k >= 1",
            lhs: cfg.k,
            rhs: 1.0,
        });
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let s = RescalingSchedule::matern(2.0, 0.5, 1).unwrap();
        assert_eq!(rescale_matern(1024, &s).unwrap(), 2f64.powf(-3.75));
        let s1 = RescalingSchedule::matern(1.0, 0.5, 1).unwrap();
        assert!((rescale_matern(256, &s1).unwrap() - 0.25).abs() < 1e-15);
        let flat = RescalingSchedule::matern(0.7, 0.7, 3).unwrap();
        assert_eq!(rescale_matern(99_999, &flat).unwrap(), 1.0);
        assert!(matches!(
            RescalingSchedule::matern(0.4, 0.5, 1),
            Err(Error::Schedule(_))
        ));
    }

    #[test]
    fn ch_schedule() {
        let s = RescalingSchedule::ch(2.0, 0.5, 1, 2.0).unwrap();
        let m = RescalingSchedule::matern(2.0, 0.5, 1).unwrap();
        assert_eq!(rescale_ch(1024, &s).unwrap(), rescale_matern(1024, &m).unwrap());
        let s = RescalingSchedule::ch(3.0, 1.0, 2, 2.5).unwrap();
        assert!((rescale_ch(1_000_000, &s).unwrap() - 0.1).abs() < 1e-12);
        let low = RescalingSchedule::ch(2.0, 0.5, 1, 1.5).unwrap();
        assert!(matches!(rescale_ch(100, &low), Err(Error::Condition(_))));
        let big = RescalingSchedule::ch(2.0, 0.5, 1, 40.0).unwrap();
        assert!(ch_alpha_warning(100, &big).is_some());
        assert!(ch_alpha_warning(100, &s).is_none());
    }

    #[test]
    fn aniso_schedule() {
        let s = RescalingSchedule::anisotropic(2.0, 0.5, 1).unwrap();
        let unit = AnisotropyMatrix::identity(1).unwrap();
        let (lmax, b) = rescale_aniso(1024, &s, &unit, 1.0).unwrap();
        assert!((lmax - 2f64.powf(3.75)).abs() < 1e-12);
        assert!((b.lambda_max() - lmax).abs() < 1e-12);
        let skew = AnisotropyMatrix::diagonal(&[1.0, 0.01]).unwrap();
        let s2 = RescalingSchedule::anisotropic(2.0, 0.5, 2).unwrap();
        assert!(matches!(rescale_aniso(100, &s2, &skew, 0.1), Err(Error::Condition(_))));
    }

    #[test]
    fn rate_examples() {
        assert!((minimax_rate(10_000, 0.5, 1) - 0.1).abs() < 1e-15);
        assert!((minimax_rate(4096, 1.0, 2) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn hierarchical_conditions() {
        assert!(check_hier_conditions(&HierConfig { v: 5.0, k: 3.0, d: 1 }, 0.5).is_ok());
        assert!(check_hier_conditions(&HierConfig { v: 6.0, k: 7.0, d: 2 }, 1.0).is_ok());
        let v = check_hier_conditions(&HierConfig { v: 2.0, k: 7.0, d: 2 }, 1.0).unwrap_err();
        assert_eq!(v[0].lhs, 2.0);
        assert_eq!(v[0].rhs, 4.0);
        // k just below the floor 5.5/3.5.
        let v = check_hier_conditions(&HierConfig { v: 5.0, k: 1.5, d: 1 }, 0.5).unwrap_err();
        assert_eq!(v.len(), 1);
        assert!((v[0].rhs - 5.5 / 3.5).abs() < 1e-15);
    }
}
