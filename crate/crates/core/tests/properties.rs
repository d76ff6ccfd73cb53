//! Property tests for the invariants each module promises.

use nalgebra::DMatrix;
use proptest::prelude::*;
use rescaled_gp::covariance::{cov_matrix, AnisotropyMatrix, CovarianceModel, Kernel, MaternParams};
use rescaled_gp::experiments::{run_scenario, Method, ScenarioConfig, TruthSpec};
use rescaled_gp::gp::{fit, Dataset};
use rescaled_gp::hier::{log_prior_a, mh_with_likelihood, HierPrior, MhConfig};
use rescaled_gp::schedules::{
    check_hier_conditions, minimax_rate, rescale_ch, rescale_matern, ExponentRule, HierConfig, RescalingSchedule,
};
use rescaled_gp::specfun::{bessel_k, hyper_u, ln_gamma, reg_lower_gamma, QuadratureConfig};
use rescaled_gp::Points;

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        ((a - b) / b).abs()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn bessel_k_is_even_in_order(v in 0.0f64..8.0, x in 0.01f64..50.0) {
        let k = bessel_k(v, x).unwrap();
        prop_assert!(rel(bessel_k(-v, x).unwrap(), k) <= 1e-12);
    }

    #[test]
    fn hyper_u_reduces_to_power(a in 0.5f64..10.0, c in 0.1f64..10.0) {
        let u = hyper_u(a, a + 1.0, c, &QuadratureConfig::default()).unwrap();
        prop_assert!(rel(u, c.powf(-a)) <= 1e-8);
    }

    #[test]
    fn incomplete_gamma_is_monotone(a in 0.05f64..30.0, mut xs in prop::collection::vec(0.0f64..80.0, 2..40)) {
        xs.sort_by(f64::total_cmp);
        let p: Vec<f64> = xs.iter().map(|&x| reg_lower_gamma(a, x).unwrap()).collect();
        prop_assert!(p.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn incomplete_gamma_sandwich(ai in 0usize..3, lx in -3.0f64..1.3) {
        let a = [0.3f64, 2.0, 7.0][ai];
        let x = 10f64.powf(lx);
        let c = (-ln_gamma(1.0 + a).unwrap() / a).exp();
        let (r, s) = if a < 1.0 { (c, 1.0) } else { (1.0, c) };
        let p = reg_lower_gamma(a, x).unwrap();
        prop_assert!((-(-s * x).exp_m1()).powf(a) < p);
        prop_assert!(p < (-(-r * x).exp_m1()).powf(a));
    }

    #[test]
    fn matern_half_is_exponential(phi in 0.05f64..5.0, s2 in 0.1f64..10.0, h in 0.0f64..20.0) {
        let m = CovarianceModel::matern(0.5, phi, s2).unwrap();
        prop_assert!((m.cov_lag(h).unwrap() - s2 * (-h / phi).exp()).abs() <= 1e-10 * s2);
    }

    #[test]
    fn isotropic_b_matches_lengthscale(
        v in 0.3f64..4.0,
        phi in 0.1f64..3.0,
        x in prop::collection::vec(-2.0f64..2.0, 2),
        y in prop::collection::vec(-2.0f64..2.0, 2),
    ) {
        let k = Kernel::Matern(MaternParams::new(v, 1.0, 1.3).unwrap());
        let aniso = CovarianceModel::anisotropic(k, AnisotropyMatrix::scaled_identity(2, 1.0 / (phi * phi)).unwrap());
        let iso = CovarianceModel::matern(v, phi, 1.3).unwrap();
        let (a, b) = (aniso.cov(&x, &y).unwrap(), iso.cov(&x, &y).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300) || rel(a, b) <= 1e-12);
    }

    #[test]
    fn covariance_depends_only_on_distance(
        v in 0.3f64..4.0,
        x in prop::collection::vec(-2.0f64..2.0, 2),
        y in prop::collection::vec(-2.0f64..2.0, 2),
        theta in 0.0f64..6.3,
        shift in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let m = CovarianceModel::matern(v, 0.7, 1.0).unwrap();
        let (c, s) = (theta.cos(), theta.sin());
        let mv = |p: &[f64]| vec![c * p[0] - s * p[1] + shift[0], s * p[0] + c * p[1] + shift[1]];
        prop_assert!(rel(m.cov(&mv(&x), &mv(&y)).unwrap(), m.cov(&x, &y).unwrap()) <= 1e-9);
    }

    #[test]
    fn matern_spectral_sandwich(
        v in 0.5f64..3.0,
        e1 in 0.2f64..5.0,
        e2 in 0.2f64..5.0,
        theta in 0.0f64..3.2,
        lam in prop::collection::vec(-10.0f64..10.0, 2),
    ) {
        let (c, s) = (theta.cos(), theta.sin());
        let q = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let b = AnisotropyMatrix::new(&q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![e1, e2])) * q.transpose()).unwrap();
        let k = Kernel::Matern(MaternParams::new(v, 1.0, 1.0).unwrap());
        let cst = rescaled_gp::covariance::spectral_sandwich_constant(&b, v);
        let iso = AnisotropyMatrix::scaled_identity(2, b.lambda_max()).unwrap();
        let mb = CovarianceModel::anisotropic(k, b).spectral_density(&lam).unwrap();
        let mi = CovarianceModel::anisotropic(k, iso).spectral_density(&lam).unwrap();
        let slack = 1.0 + 1e-10;
        prop_assert!(mb * slack >= mi / cst && mb <= cst * mi * slack, "{} vs [{}, {}]", mb, mi / cst, cst * mi);
    }
}

fn random_points(n: usize, d: usize, seed: u64) -> Points {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Points::new(d, (0..n * d).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn any_model() -> impl Strategy<Value = CovarianceModel> {
    prop_oneof![
        (0.3f64..3.0, 0.05f64..1.0, 0.5f64..2.0).prop_map(|(v, p, s)| CovarianceModel::matern(v, p, s).unwrap()),
        (0.3f64..2.0, 0.5f64..4.0, 0.05f64..1.0, 0.5f64..2.0)
            .prop_map(|(v, a, b, s)| CovarianceModel::ch(v, a, b, s).unwrap()),
        (0.01f64..0.5, 0.5f64..2.0).prop_map(|(c, s)| CovarianceModel::sqexp(c, s).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn gram_matrix_is_exactly_symmetric(model in any_model(), seed in any::<u64>(), n in 2usize..40) {
        let k = cov_matrix(&random_points(n, 2, seed), &model, 0.1).unwrap();
        prop_assert!(k == k.transpose());
    }

    #[test]
    fn variance_contracts_and_more_data_helps(
        model in any_model(),
        seed in any::<u64>(),
        omega in 0.01f64..1.0,
        d in 1usize..3,
    ) {
        let x = random_points(11, d, seed);
        let xs = random_points(5, d, seed ^ 1);
        let y: Vec<f64> = (0..11).map(|i| (i as f64 * 0.7).sin()).collect();
        let full = fit(&Dataset::new(x.clone(), y.clone(), omega).unwrap(), &model).unwrap();
        let idx: Vec<usize> = (0..10).collect();
        let fewer = fit(&Dataset::new(x.select(&idx), y[..10].to_vec(), omega).unwrap(), &model).unwrap();
        let tol = 1e-9 * model.variance();
        for (pf, pl) in full.predict_many(&xs).unwrap().iter().zip(fewer.predict_many(&xs).unwrap()) {
            prop_assert!(pf.var <= model.variance() + tol);
            prop_assert!(pl.var <= model.variance() + tol);
            prop_assert!(pf.var <= pl.var + tol, "{} > {}", pf.var, pl.var);
        }
    }
}

proptest! {
    #[test]
    fn schedules_shrink_with_n(v in 0.6f64..10.0, frac in 0.05f64..0.95, d in 1usize..4, n in 2usize..100_000) {
        let eta = v * frac;
        let s = RescalingSchedule::matern(v, eta, d).unwrap();
        let (a, b) = (rescale_matern(n, &s).unwrap(), rescale_matern(n + 1, &s).unwrap());
        prop_assert!(b < a);
        let ch = RescalingSchedule::ch(v, eta, d, d as f64 / 2.0 + 1.5).unwrap();
        prop_assert!(rescale_ch(n + 1, &ch).unwrap() < rescale_ch(n, &ch).unwrap());
        prop_assert!(1.0 / b > 1.0 / a);
    }

    #[test]
    fn matern_and_ch_schedules_agree(v in 0.6f64..10.0, frac in 0.05f64..1.0, d in 1usize..4, n in 2usize..100_000, rule in 0u8..2) {
        let rule = if rule == 0 { ExponentRule::Theory } else { ExponentRule::Doubled };
        let m = RescalingSchedule::matern(v, v * frac, d).unwrap().with_rule(rule);
        let c = RescalingSchedule::ch(v, v * frac, d, d as f64 / 2.0 + 1.5).unwrap().with_rule(rule);
        prop_assert_eq!(rescale_matern(n, &m).unwrap(), rescale_ch(n, &c).unwrap());
    }

    #[test]
    fn minimax_rate_identity(n in 1usize..10_000_000, eta in 0.01f64..20.0, d in 1usize..6) {
        let r = minimax_rate(n, eta, d) * (n as f64).powf(eta / (2.0 * eta + d as f64));
        prop_assert!((r - 1.0).abs() <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn hier_conditions_are_monotone(v in 0.5f64..20.0, k in 1.0f64..20.0, dv in 0.0f64..5.0, dk in 0.0f64..5.0, eta in 0.1f64..3.0, d in 1usize..4) {
        let ok = |v: f64, k: f64| check_hier_conditions(&HierConfig { v, k, d }, eta).is_ok();
        if ok(v, k) {
            prop_assert!(ok(v + dv, k));
            prop_assert!(ok(v, k + dk));
        }
    }

    #[test]
    fn prior_follows_envelope(k in 1.0f64..8.0, d in 1usize..4) {
        let prior = HierPrior::new(k, d).unwrap();
        let kd = prior.kd();
        let envelope = |a: f64| (kd - 1.0) * a.ln() - a.powf(kd);
        let c = log_prior_a(1.0, &prior).unwrap() - envelope(1.0);
        for i in 0..50 {
            let a = 1.0 + 49.0 * i as f64 / 49.0;
            let gap = log_prior_a(a, &prior).unwrap() - envelope(a) - c;
            prop_assert!(gap.abs() <= 1e-9 * envelope(a).abs().max(1.0));
        }
    }

    #[test]
    fn chain_bookkeeping(burn_in in 0usize..60, draws in 2usize..300, thin_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let cfg = MhConfig { burn_in, draws, proposal_sd: 0.5, seed, init_a: None };
        let chain = mh_with_likelihood(|_| Some(0.0), &HierPrior::new(2.0, 1).unwrap(), &cfg, 1.0).unwrap();
        prop_assert_eq!(chain.trace.len(), burn_in + draws);
        prop_assert_eq!(chain.samples.len(), draws);
        prop_assert_eq!(chain.log_posteriors.len(), draws);
        prop_assert_eq!(chain.burn_in, burn_in);
        prop_assert!(chain.trace.iter().enumerate().all(|(i, t)| t.iteration == i));
        let kept: Vec<f64> = chain.trace[burn_in..].iter().map(|t| t.a).collect();
        prop_assert_eq!(&kept, &chain.samples);
        let thin = 1 + ((draws - 2) as f64 * thin_frac) as usize;
        prop_assert_eq!(chain.thinned(thin).unwrap().len(), draws.div_ceil(thin));
        prop_assert!(chain.thinned(draws).is_err() && chain.thinned(0).is_err());
    }
}

fn exact_gp_scenario(replicates: usize, seed: u64) -> ScenarioConfig {
    let model = CovarianceModel::matern(1.5, 0.3, 1.0).unwrap();
    let schedule = RescalingSchedule::matern(1.5, 0.5, 1)
        .unwrap()
        .with_rule(ExponentRule::Fixed(0.0))
        .with_multiplier(0.3);
    ScenarioConfig {
        d: 1,
        n_total: 90,
        n_test: 40,
        truth: TruthSpec::Gp { model: model.clone() },
        omega: 0.1,
        method: Method::Rescaled {
            schedule,
            sigma2: Some(1.0),
        },
        model,
        replicates,
        seed,
        level: 0.95,
    }
}

#[test]
fn replicates_do_not_depend_on_each_other() {
    let five = run_scenario(&exact_gp_scenario(5, 3)).unwrap();
    let three = run_scenario(&exact_gp_scenario(3, 3)).unwrap();
    assert_eq!(&five.rows[..3], &three.rows[..]);
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let again = serial.install(|| run_scenario(&exact_gp_scenario(5, 3)).unwrap());
    let mut a: Vec<String> = five.rows.iter().map(|r| format!("{r:?}")).collect();
    let mut b: Vec<String> = again.rows.iter().rev().map(|r| format!("{r:?}")).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);
}

#[test]
fn identical_configs_give_identical_reports() {
    let a = run_scenario(&exact_gp_scenario(4, 11)).unwrap();
    let b = run_scenario(&exact_gp_scenario(4, 11)).unwrap();
    assert_eq!(
        format!("{:?}{:?}{:?}", a.rows, a.info, a.failures),
        format!("{:?}{:?}{:?}", b.rows, b.info, b.failures)
    );
}

/// With the true covariance, coverage of held-out observations is 0.95 up
/// to binomial noise over all test points.
#[test]
fn exact_model_covers_at_nominal_level() {
    let cfg = exact_gp_scenario(30, 2024);
    let report = run_scenario(&cfg).unwrap();
    assert!(report.failures.is_empty());
    let m = (cfg.n_test * cfg.replicates) as f64;
    let hits: f64 = report.rows.iter().map(|r| r.cvg * cfg.n_test as f64).sum();
    let half = 2.576 * (0.95 * 0.05 / m).sqrt();
    let cvg = hits / m;
    assert!((cvg - 0.95).abs() <= half, "coverage {cvg} outside 0.95 ± {half}");
}
