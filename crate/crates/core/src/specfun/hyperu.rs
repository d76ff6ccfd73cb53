//! Tricomi's confluent hypergeometric function U(a, b, c) from its Laplace
//! integral
//!
//! U(a,b,c) = (1/Γ(a)) ∫₀^∞ e^{−ct} t^{a−1} (1+t)^{b−a−1} dt,  a > 0, c > 0.
//!
//! The integral is taken in u = ln(1+t), which turns the algebraic tail into
//! an exponential one and the e^{−ct} factor into a double-exponential
//! cutoff. For a < 1 the endpoint singularity u^{a−1} is removed by the
//! further substitution u = s^{1/a}. The integrand is evaluated relative to
//! its sampled peak, so U itself may be far outside the f64 range only in
//! the log-space entry point.

use crate::error::{domain, Error, Result};
use crate::specfun::gamma::ln_gamma_unchecked;
use crate::specfun::quadrature::{dyadic_cutoff, integrate_partition, QuadratureConfig};

/// Drop (in nats) below the sampled peak at which the integrand is truncated.
const TAIL_DROP: f64 = 46.0;

/// ln(e^u − 1) for u > 0 without overflow.
fn ln_expm1(u: f64) -> f64 {
    if u > 1.0 {
        u + (-(-u).exp()).ln_1p()
    } else {
        u.exp_m1().ln()
    }
}

/// ln((e^u − 1)/u), continuous at u = 0.
fn ln_expm1_over_u(u: f64) -> f64 {
    if u < 1e-8 {
        0.5 * u
    } else {
        ln_expm1(u) - u.ln()
    }
}

struct Integrand {
    a: f64,
    b: f64,
    c: f64,
    ln_c: f64,
}

impl Integrand {
    /// ln of the integrand in the integration variable x (u for a ≥ 1,
    /// s = u^a for a < 1), dropping the constant 1/a of the second form.
    fn ln_at(&self, x: f64) -> f64 {
        let Integrand { a, b, c, ln_c } = *self;
        if a >= 1.0 {
            let u = x;
            let lem = ln_expm1(u);
            let power = if a == 1.0 { 0.0 } else { (a - 1.0) * lem };
            power + u * (b - a) - (ln_c + lem).exp()
        } else {
            let u = x.powf(1.0 / a);
            let cexp = if u > 1e-8 { (ln_c + ln_expm1(u)).exp() } else { c * u };
            (a - 1.0) * ln_expm1_over_u(u) + u * (b - a) - cexp
        }
    }

    /// Where the e^{−ct} cutoff sets in, in the integration variable.
    fn scale(&self) -> f64 {
        let t_star = self.a.max(1.0) / self.c;
        let u_star = t_star.ln_1p().max(1e-300);
        if self.a >= 1.0 {
            u_star
        } else {
            u_star.powf(self.a)
        }
    }
}

/// ln U(a, b, c) for a > 0, c > 0.
pub fn ln_hyper_u(a: f64, b: f64, c: f64, cfg: &QuadratureConfig) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(domain("hyper_u", format!("a must be positive and finite, got {a}")));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(domain("hyper_u", format!("c must be positive and finite, got {c}")));
    }
    if !b.is_finite() {
        return Err(domain("hyper_u", format!("b must be finite, got {b}")));
    }
    cfg.validate()?;
    let f = Integrand { a, b, c, ln_c: c.ln() };
    let (upper, mut points) = dyadic_cutoff(|x| f.ln_at(x), f.scale(), TAIL_DROP)
        .ok_or_else(|| Error::NonFinite(format!("U({a}, {b}, {c}): integrand does not decay on the scan grid")))?;
    let peak = points
        .iter()
        .chain(std::iter::once(&upper))
        .map(|&x| f.ln_at(x))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut breaks = Vec::with_capacity(points.len() + 2);
    breaks.push(0.0);
    breaks.append(&mut points);
    breaks.push(upper);
    let r = integrate_partition(|x| (f.ln_at(x) - peak).exp(), &breaks, cfg)?;
    if !(r.value > 0.0) {
        return Err(Error::NonFinite(format!(
            "U({a}, {b}, {c}): quadrature returned non-positive value {}",
            r.value
        )));
    }
    let jac = if a < 1.0 { -a.ln() } else { 0.0 };
    Ok(r.value.ln() + peak + jac - ln_gamma_unchecked(a))
}

/// U(a, b, c) for a > 0, c > 0.
pub fn hyper_u(a: f64, b: f64, c: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let lu = ln_hyper_u(a, b, c, cfg)?;
    if lu > f64::MAX.ln() {
        return Err(Error::Overflow {
            func: "hyper_u",
            msg: format!("U({a}, {b}, {c}) = exp({lu}) exceeds the f64 range"),
        });
    }
    Ok(lu.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::gamma::ln_gamma;

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    #[test]
    fn reduces_to_power_when_b_is_a_plus_one() {
        assert!((hyper_u(2.0, 3.0, 4.0, &cfg()).unwrap() - 0.0625).abs() < 1e-14);
        for (a, c) in [(0.3f64, 0.01f64), (0.5, 7.0), (1.0, 1.0), (4.5, 0.2), (10.0, 30.0)] {
            let want = c.powf(-a);
            let got = hyper_u(a, a + 1.0, c, &cfg()).unwrap();
            assert!(((got - want) / want).abs() < 1e-10, "a={a} c={c}: {got} vs {want}");
        }
    }

    #[test]
    fn reference_value() {
        // U(1,1,1) = e·E₁(1).
        let got = hyper_u(1.0, 1.0, 1.0, &cfg()).unwrap();
        assert!((got / 0.596347362323194074341078499369 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn beta_limit_at_small_c() {
        // U(α, 1−v, c) → Γ(v)/Γ(α+v) as c → 0 when v > 0.
        let want = (ln_gamma(0.5).unwrap() - ln_gamma(2.5).unwrap()).exp();
        let got = hyper_u(2.0, 0.5, 1e-14, &cfg()).unwrap();
        assert!(((got - want) / want).abs() < 1e-5, "{got} vs {want}");
    }

    #[test]
    fn reference_values_across_regimes() {
        // 30-digit references covering large c, tiny c, a < 1 and b > 1.
        let cases = [
            (3.0, -1.5, 1e4, 9.98352142322164053376337013653e-13),
            (0.7, -3.2, 1e-6, 0.375310542578202642354252660506),
            (0.3, 2.5, 0.05, 30.1342897377757521338612920973),
            (5.0, -4.0, 1e-3, 6.60549767555921231848907735855e-5),
            (0.2, 0.9, 3.0, 0.789522397048109424832753062792),
        ];
        for (a, b, c, want) in cases {
            let got = hyper_u(a, b, c, &cfg()).unwrap();
            assert!(
                ((got - want) / want).abs() < 1e-10,
                "U({a},{b},{c}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn rejects_bad_domain() {
        assert!(matches!(hyper_u(0.0, 1.0, 1.0, &cfg()), Err(Error::Domain { .. })));
        assert!(matches!(hyper_u(1.0, 1.0, -1.0, &cfg()), Err(Error::Domain { .. })));
    }

    #[test]
    fn tight_budget_reports_error_estimate() {
        let tight = QuadratureConfig::new(1e-15, 0.0, 16).unwrap();
        match hyper_u(0.7, -3.2, 1e-6, &tight) {
            Err(Error::Quadrature { error_estimate, .. }) => assert!(error_estimate > 0.0),
            other => panic!("expected quadrature error, got {other:?}"),
        }
    }
}
