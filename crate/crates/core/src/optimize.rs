//! Derivative-free minimization by the Nelder–Mead simplex method.

/// Outcome of one simplex run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// Evaluations that returned a non-finite value.
    pub failures: usize,
}

/// Minimizes `f` from `x0` with an initial simplex of edge `step`, spending
/// at most `budget` evaluations. Non-finite values are treated as +∞.
/// Stops early once the simplex values agree to `ftol` (relative) and its
/// vertices to `xtol` (absolute).
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: f64,
    budget: usize,
    ftol: f64,
    xtol: f64,
) -> SimplexResult {
    let k = x0.len();
    let mut evaluations = 0;
    let mut failures = 0;
    let mut eval = |x: &[f64], evaluations: &mut usize, failures: &mut usize| {
        *evaluations += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            *failures += 1;
            f64::INFINITY
        }
    };
    if budget == 0 || k == 0 {
        return SimplexResult {
            x: x0.to_vec(),
            value: f64::NAN,
            evaluations: 0,
            failures: 0,
        };
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(k + 1);
    let v0 = eval(x0, &mut evaluations, &mut failures);
    simplex.push((x0.to_vec(), v0));
    for i in 0..k {
        if evaluations >= budget {
            break;
        }
        let mut x = x0.to_vec();
        x[i] += step;
        let v = eval(&x, &mut evaluations, &mut failures);
        simplex.push((x, v));
    }
    if simplex.len() < k + 1 {
        return best_of(simplex, evaluations, failures);
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    while evaluations < budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[k].1;
        let spread = simplex
            .iter()
            .skip(1)
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if worst.is_finite() && (worst - best).abs() <= ftol * (best.abs() + 1e-12) && spread <= xtol {
            break;
        }
        let mut centroid = vec![0.0; k];
        for (x, _) in &simplex[..k] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / k as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[k].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(alpha);
        let fr = eval(&xr, &mut evaluations, &mut failures);
        if fr < simplex[0].1 {
            if evaluations >= budget {
                simplex[k] = (xr, fr);
                break;
            }
            let xe = along(gamma);
            let fe = eval(&xe, &mut evaluations, &mut failures);
            simplex[k] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[k - 1].1 {
            simplex[k] = (xr, fr);
            continue;
        }
        if evaluations >= budget {
            break;
        }
        let (xc, fc) = if fr < simplex[k].1 {
            let xc = along(rho);
            let fc = eval(&xc, &mut evaluations, &mut failures);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = eval(&xc, &mut evaluations, &mut failures);
            (xc, fc)
        };
        if fc < simplex[k].1.min(fr) {
            simplex[k] = (xc, fc);
            continue;
        }
        // Shrink toward the best vertex.
        let x_best = simplex[0].0.clone();
        for item in simplex.iter_mut().skip(1) {
            if evaluations >= budget {
                break;
            }
            let xs: Vec<f64> = x_best.iter().zip(&item.0).map(|(b, x)| b + sigma * (x - b)).collect();
            let fs = eval(&xs, &mut evaluations, &mut failures);
            *item = (xs, fs);
        }
    }
    best_of(simplex, evaluations, failures)
}

fn best_of(simplex: Vec<(Vec<f64>, f64)>, evaluations: usize, failures: usize) -> SimplexResult {
    let (x, value) = simplex
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("simplex has at least one vertex");
    SimplexResult {
        x,
        value,
        evaluations,
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = nelder_mead(rosen, &[-1.2, 1.0], 0.5, 2000, 1e-14, 1e-9);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
        assert!(r.evaluations <= 2000);
    }

    #[test]
    fn respects_budget_and_failures() {
        let mut calls = 0;
        let r = nelder_mead(
            |x: &[f64]| {
                calls += 1;
                if x[0] > 0.3 {
                    f64::NAN
                } else {
                    (x[0] + 1.0).powi(2)
                }
            },
            &[0.0],
            0.5,
            17,
            0.0,
            0.0,
        );
        assert_eq!(calls, 17);
        assert_eq!(r.evaluations, 17);
        assert!(r.failures >= 1);
        assert!(r.value < 1.0);
    }

    #[test]
    fn zero_budget_returns_start() {
        let r = nelder_mead(|_: &[f64]| 0.0, &[0.25, 3.0], 1.0, 0, 1e-8, 1e-8);
        assert_eq!(r.x, vec![0.25, 3.0]);
        assert_eq!(r.evaluations, 0);
    }
}
