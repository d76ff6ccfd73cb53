//! Spectral densities under the convention cov(h) = ∫ e^{−i⟨λ,h⟩} m(λ) dλ,
//! so ∫ m = cov(0) = σ².

use super::{AnisotropyMatrix, ChParams, CovarianceModel, Kernel, MaternParams, SqExpParams};
use crate::error::{domain, Error, Result};
use crate::specfun::quadrature::ln_integrate_unimodal;
use crate::specfun::{ln_gamma_unchecked, QuadratureConfig};

const LN_PI: f64 = 1.1447298858494002;
const MIXTURE_DROP: f64 = 46.0;

fn check_freq(func: &'static str, lam: f64, d: usize) -> Result<()> {
    if !(lam >= 0.0) || !lam.is_finite() {
        return Err(domain(func, format!("frequency must be finite and ≥ 0, got {lam}")));
    }
    if d == 0 {
        return Err(domain(func, "dimension must be at least 1"));
    }
    Ok(())
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

/// ln of σ² Γ(v+d/2)/(Γ(v)π^{d/2}) κ^{2v}/(κ²+λ²)^{v+d/2}.
fn ln_matern(ln_lam2: f64, v: f64, ln_kappa2: f64, ln_sigma2: f64, d: usize) -> f64 {
    let hd = 0.5 * d as f64;
    ln_sigma2 + ln_gamma_unchecked(v + hd) - ln_gamma_unchecked(v) - hd * LN_PI + v * ln_kappa2
        - (v + hd) * log_add_exp(ln_kappa2, ln_lam2)
}

/// Matérn spectral density at |λ| in R^d, normalized so that it integrates
/// to σ²; κ = √(2v)/φ.
pub fn matern_spectral(lam: f64, p: &MaternParams, d: usize) -> Result<f64> {
    p.validate()?;
    check_freq("matern_spectral", lam, d)?;
    let ln_kappa2 = (2.0 * p.v).ln() - 2.0 * p.phi.ln();
    Ok(ln_matern(2.0 * lam.ln(), p.v, ln_kappa2, p.sigma2.ln(), d).exp())
}

/// σ² κ^{2v} / (π^{d/2} (κ² + λ²)^{v+d/2}): the Matérn spectral shape
/// without the Γ(v+d/2)/Γ(v) factor, so it integrates to
/// σ² Γ(v)/Γ(v+d/2) rather than σ².
pub fn matern_spectral_shape(lam: f64, p: &MaternParams, d: usize) -> Result<f64> {
    p.validate()?;
    check_freq("matern_spectral_shape", lam, d)?;
    let hd = 0.5 * d as f64;
    let ln_kappa2 = (2.0 * p.v).ln() - 2.0 * p.phi.ln();
    let ln = p.sigma2.ln() - hd * LN_PI + p.v * ln_kappa2 - (p.v + hd) * log_add_exp(ln_kappa2, 2.0 * lam.ln());
    Ok(ln.exp())
}

/// CH spectral density as the Gamma(α, 1) mixture over y = β²/(2φ²) of
/// normalized Matérn densities with κ² = 4vy/β².
pub fn ch_spectral(lam: f64, p: &ChParams, d: usize, cfg: &QuadratureConfig) -> Result<f64> {
    p.validate()?;
    cfg.validate()?;
    check_freq("ch_spectral", lam, d)?;
    let hd = 0.5 * d as f64;
    if lam == 0.0 && p.alpha <= hd {
        return Err(Error::Overflow {
            func: "ch_spectral",
            msg: format!("density is infinite at λ = 0 when α = {} ≤ d/2", p.alpha),
        });
    }
    let ln_lam2 = 2.0 * lam.ln();
    let ln_sigma2 = p.sigma2.ln();
    let ln_k0 = (4.0 * p.v).ln() - 2.0 * p.beta.ln();
    let ln_gamma_alpha = ln_gamma_unchecked(p.alpha);
    let lg = |w: f64| p.alpha * w - w.exp() - ln_gamma_alpha + ln_matern(ln_lam2, p.v, ln_k0 + w, ln_sigma2, d);
    Ok(ln_integrate_unimodal(lg, p.alpha.ln(), MIXTURE_DROP, cfg)?.exp())
}

/// σ² (c/(4π))^{d/2} exp(−cλ²/4).
pub fn sqexp_spectral(lam: f64, p: &SqExpParams, d: usize) -> Result<f64> {
    p.validate()?;
    check_freq("sqexp_spectral", lam, d)?;
    let hd = 0.5 * d as f64;
    Ok(p.sigma2 * (p.c / (4.0 * std::f64::consts::PI)).powf(hd) * (-p.c * lam * lam / 4.0).exp())
}

fn kernel_spectral(k: &Kernel, lam: f64, d: usize, cfg: &QuadratureConfig) -> Result<f64> {
    match k {
        Kernel::Matern(p) => matern_spectral(lam, p, d),
        Kernel::Ch(p) => ch_spectral(lam, p, d, cfg),
        Kernel::SqExp(p) => sqexp_spectral(lam, p, d),
    }
}

pub(super) fn model_spectral(model: &CovarianceModel, lam: &[f64]) -> Result<f64> {
    model.validate()?;
    if lam.iter().any(|l| !l.is_finite()) {
        return Err(domain("spectral_density", "frequency must be finite"));
    }
    match &model.anisotropy {
        None => {
            let r = lam.iter().map(|l| l * l).sum::<f64>().sqrt();
            kernel_spectral(&model.kernel, r, lam.len(), &model.quadrature)
        }
        Some(b) => aniso_spectral(lam, &model.kernel, b, &model.quadrature),
    }
}

/// Spectral density of the kernel k(sqrt(hᵀBh)):
/// m^B(λ) = |B|^{−1/2} m(sqrt(λᵀB⁻¹λ)).
pub fn aniso_spectral(lam: &[f64], kernel: &Kernel, b: &AnisotropyMatrix, cfg: &QuadratureConfig) -> Result<f64> {
    if lam.len() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: b.dim(),
            found: lam.len(),
        });
    }
    let r = b.inv_quad_form(lam).sqrt();
    Ok((-0.5 * b.ln_det()).exp() * kernel_spectral(kernel, r, lam.len(), cfg)?)
}

/// C with (1/C)·m^{λ_max I} ≤ m^B ≤ C·m^{λ_max I} for the Matérn family:
/// (λ_max/λ_min)^{v+d/2}.
pub fn spectral_sandwich_constant(b: &AnisotropyMatrix, v: f64) -> f64 {
    let hd = 0.5 * b.dim() as f64;
    (1.0 / b.eigen_ratio()).powf(v + hd)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matern_at_origin() {
        let p = MaternParams::new(0.5, 1.0, 1.0).unwrap();
        let shape = matern_spectral_shape(0.0, &p, 1).unwrap();
        assert!((shape - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-15);
        let m = matern_spectral(0.0, &p, 1).unwrap();
        assert!((m - 1.0 / std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn matern_tail_exponent() {
        let p = MaternParams::new(1.3, 0.4, 2.0).unwrap();
        let lam = 1e6;
        let ratio = matern_spectral(2.0 * lam, &p, 2).unwrap() / matern_spectral(lam, &p, 2).unwrap();
        assert!((ratio / 2f64.powf(-(2.0 * 1.3 + 2.0)) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ch_spectral_matches_closed_form_at_origin() {
        // At λ = 0 the mixture integrates in closed form:
        // σ²Γ(v+d/2)Γ(α−d/2)/(Γ(v)Γ(α)π^{d/2}) (β²/(4v))^{d/2}.
        let p = ChParams::new(1.2, 2.5, 0.7, 1.7).unwrap();
        let cfg = QuadratureConfig::default();
        for d in [1usize, 2, 3] {
            let hd = 0.5 * d as f64;
            let want = (p.sigma2.ln() + ln_gamma_unchecked(p.v + hd) + ln_gamma_unchecked(p.alpha - hd)
                - ln_gamma_unchecked(p.v)
                - ln_gamma_unchecked(p.alpha)
                - hd * LN_PI
                + hd * (p.beta * p.beta / (4.0 * p.v)).ln())
            .exp();
            let got = ch_spectral(0.0, &p, d, &cfg).unwrap();
            assert!(((got - want) / want).abs() < 1e-9, "d={d}: {got} vs {want}");
        }
        let heavy = ChParams::new(1.0, 0.4, 1.0, 1.0).unwrap();
        assert!(matches!(ch_spectral(0.0, &heavy, 1, &cfg), Err(Error::Overflow { .. })));
        assert!(ch_spectral(0.5, &heavy, 1, &cfg).unwrap() > 0.0);
    }

    #[test]
    fn isotropic_b_reproduces_isotropic_density() {
        let phi = 0.3;
        let b = AnisotropyMatrix::scaled_identity(2, 1.0 / (phi * phi)).unwrap();
        let unit = Kernel::Matern(MaternParams::new(1.5, 1.0, 1.0).unwrap());
        let iso = MaternParams::new(1.5, phi, 1.0).unwrap();
        let cfg = QuadratureConfig::default();
        for lam in [[0.0, 0.0], [1.0, 2.0], [30.0, -4.0]] {
            let a = aniso_spectral(&lam, &unit, &b, &cfg).unwrap();
            let r = (lam[0] * lam[0] + lam[1] * lam[1]).sqrt();
            let i = matern_spectral(r, &iso, 2).unwrap();
            assert!(((a - i) / i).abs() < 1e-12);
        }
    }
}
