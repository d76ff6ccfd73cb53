//! Globally adaptive Gauss–Kronrod (7/15) quadrature on finite intervals.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance policy shared by every quadrature-backed special function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            max_subdivisions: 2048,
        }
    }
}

impl QuadratureConfig {
    pub fn new(rel_tol: f64, abs_tol: f64, max_subdivisions: usize) -> Result<Self> {
        let cfg = Self {
            rel_tol,
            abs_tol,
            max_subdivisions,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "quadrature rel_tol must be positive, got {}",
                self.rel_tol
            )));
        }
        if !(self.abs_tol >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "quadrature abs_tol must be non-negative, got {}",
                self.abs_tol
            )));
        }
        if self.max_subdivisions < 16 {
            return Err(Error::InvalidArgument(format!(
                "quadrature max_subdivisions must be at least 16, got {}",
                self.max_subdivisions
            )));
        }
        Ok(())
    }
}

/// Value and error estimate returned by [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub subdivisions: usize,
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = fc * WGK[7];
    let mut res_g = fc * WG[3];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    res_abs *= half.abs();
    res_asc *= half.abs();
    let mut error = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (200.0 * error / res_asc).powf(1.5).min(1.0);
    }
    let round_floor = 50.0 * f64::EPSILON * res_abs;
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) && round_floor > error {
        error = round_floor;
    }
    Segment { a, b, value, error }
}

/// Integrates `f` over the partition given by consecutive `breakpoints`,
/// bisecting the segment with the largest error estimate until the total
/// error meets `max(abs_tol, rel_tol·|I|)`.
pub fn integrate_partition<F: FnMut(f64) -> f64>(
    mut f: F,
    breakpoints: &[f64],
    cfg: &QuadratureConfig,
) -> Result<QuadResult> {
    if breakpoints.len() < 2 {
        return Err(Error::InvalidArgument(
            "integration needs at least two breakpoints".into(),
        ));
    }
    let mut heap = BinaryHeap::new();
    for w in breakpoints.windows(2) {
        if w[1] > w[0] {
            heap.push(kronrod15(&mut f, w[0], w[1]));
        }
    }
    let mut subdivisions = heap.len();
    loop {
        let (value, error) = heap.iter().fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error));
        if !value.is_finite() || !error.is_finite() {
            return Err(Error::NonFinite(format!(
                "integrand produced a non-finite partial integral ({value})"
            )));
        }
        let target = cfg.abs_tol.max(cfg.rel_tol * value.abs());
        if error <= target {
            return Ok(QuadResult {
                value,
                error,
                subdivisions,
            });
        }
        if subdivisions >= cfg.max_subdivisions {
            return Err(Error::Quadrature {
                estimate: value,
                error_estimate: error,
                subdivisions,
            });
        }
        let worst = match heap.pop() {
            Some(s) => s,
            None => {
                return Ok(QuadResult {
                    value,
                    error,
                    subdivisions,
                })
            }
        };
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            // Interval exhausted at machine resolution.
            return Err(Error::Quadrature {
                estimate: value,
                error_estimate: error,
                subdivisions,
            });
        }
        heap.push(kronrod15(&mut f, worst.a, mid));
        heap.push(kronrod15(&mut f, mid, worst.b));
        subdivisions += 1;
    }
}

/// Integrates `f` over `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, cfg: &QuadratureConfig) -> Result<QuadResult> {
    integrate_partition(f, &[a, b], cfg)
}

/// Finds a point beyond which `log_f` has dropped `drop` below its sampled
/// maximum, scanning the dyadic grid 2^-12, …, 2^20 (scaled by `scale`).
/// Returns `(upper_limit, grid points below it)`.
pub(crate) fn dyadic_cutoff<F: FnMut(f64) -> f64>(mut log_f: F, scale: f64, drop: f64) -> Option<(f64, Vec<f64>)> {
    let mut peak = f64::NEG_INFINITY;
    let mut seen_peak = false;
    let mut points = Vec::new();
    for k in -12..=20 {
        let u = scale * 2f64.powi(k);
        let lf = log_f(u);
        if lf.is_nan() {
            return None;
        }
        if lf > peak {
            peak = lf;
            seen_peak = true;
        }
        if seen_peak && lf < peak - drop && k > -12 {
            return Some((u, points));
        }
        points.push(u);
    }
    None
}

/// ln ∫ exp(lg(w)) dw over the real line for a unimodal `lg` that decays at
/// least exponentially on both sides. `guess` should lie near the mode.
pub(crate) fn ln_integrate_unimodal<F: Fn(f64) -> f64>(
    lg: F,
    guess: f64,
    drop: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    let eval = |w: f64| -> Result<f64> {
        let v = lg(w);
        if v.is_nan() {
            Err(Error::NonFinite(format!("log-integrand is NaN at w = {w}")))
        } else {
            Ok(v)
        }
    };
    // Coarse unit-step scan, widened until the maximum is interior.
    let (mut lo, mut hi) = (guess - 64.0, guess + 64.0);
    let (mode, peak) = loop {
        let mut best = (lo, f64::NEG_INFINITY);
        let mut w = lo;
        while w <= hi {
            let v = eval(w)?;
            if v > best.1 {
                best = (w, v);
            }
            w += 1.0;
        }
        if best.1 == f64::NEG_INFINITY {
            return Err(Error::NonFinite("log-integrand is -inf on the whole scan".into()));
        }
        if best.0 - lo < 1.0 && lo > -4096.0 {
            lo -= 256.0;
        } else if hi - best.0 < 1.0 && hi < 4096.0 {
            hi += 256.0;
        } else {
            break best;
        }
    };
    let mut left = mode;
    let mut step = 1.0;
    while eval(left)? > peak - drop {
        left -= step;
        step *= 1.5;
    }
    let mut right = mode;
    step = 1.0;
    while eval(right)? > peak - drop {
        right += step;
        step *= 1.5;
    }
    let breaks = [left, mode - 1.0, mode, mode + 1.0, right];
    let r = integrate_partition(|w| (lg(w) - peak).exp(), &breaks, cfg)?;
    Ok(r.value.ln() + peak)
}
