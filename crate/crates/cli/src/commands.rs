//! Subcommands. Each returns the files it produces; nothing touches disk
//! until the caller writes the whole set.

use std::path::PathBuf;

use rescaled_gp::covariance::CovarianceModel;
use rescaled_gp::experiments::{
    derive_seed, empirical_rate, fit_method, mean_sd, metrics, replicate_chain_seed, replicate_data, run_scenario,
    FittedMethod, MethodFit, PointPrediction,
};
use rescaled_gp::gp::Dataset;
use rescaled_gp::schedules::ExponentRule;
use rescaled_gp::Points;
use serde::Serialize;

use crate::config::{schedule_for, RunConfig};
use crate::data::{estimate_noise_from_duplicates, ingest_csv, read_table, Transform};
use crate::error::{CliError, CliResult};
use crate::output::{num, opt, Outputs, Table};

/// Stream used for the MH chain when fitting a data file.
const DATA_CHAIN_STREAM: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    /// Replicated scenario for every arm: metrics, per-panel CSVs, summary.
    Simulate,
    /// Fits the configured method and reports the fitted parameters.
    Fit,
    /// Fits, then predicts at the test points.
    Predict,
    /// Hierarchical fit: the full MH trace plus predictions.
    Hier,
    /// Held-out RMSE across training sizes for each exponent rule.
    Rate,
    /// Noise variance from near-duplicate sites. Not part of the model.
    EstimateNoise { radius: f64 },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::Predict => "predict",
            Command::Hier => "hier",
            Command::Rate => "rate",
            Command::EstimateNoise { .. } => "estimate-noise",
        }
    }
}

/// Runs `cmd`. `test_override` replaces `data.test_path`.
pub fn run(cmd: &Command, cfg: &RunConfig, test_override: Option<PathBuf>) -> CliResult<Outputs> {
    match cmd {
        Command::Simulate => simulate(cfg),
        Command::Fit => fit(cfg, test_override),
        Command::Predict => predict(cfg, test_override),
        Command::Hier => hier(cfg, test_override),
        Command::Rate => rate(cfg),
        Command::EstimateNoise { radius } => estimate_noise(cfg, *radius),
    }
}

fn toml_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    toml::to_string(v).expect("summaries serialize to TOML").into_bytes()
}

#[derive(Serialize)]
struct FailureEntry {
    replicate: usize,
    message: String,
}

#[derive(Serialize)]
struct ArmSummary {
    label: String,
    family: String,
    method: String,
    replicates: usize,
    succeeded: usize,
    mspe_mean: f64,
    mspe_sd: f64,
    cvg_mean: f64,
    cvg_sd: f64,
    alci_mean: f64,
    alci_sd: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    acceptance_rate_mean: Option<f64>,
    failure: Vec<FailureEntry>,
}

#[derive(Serialize)]
struct SimulateSummary {
    seed: u64,
    level: f64,
    arm: Vec<ArmSummary>,
}

pub fn simulate(cfg: &RunConfig) -> CliResult<Outputs> {
    let arms = cfg.arms()?;
    let mut metrics_t = Table::new(["arm", "replicate", "mspe", "cvg", "alci"]);
    let mut info_t = Table::new([
        "arm",
        "replicate",
        "lengthscale",
        "sigma2",
        "acceptance_rate",
        "multiplier",
    ]);
    let mut panels = ["cvg", "mspe", "alci"].map(|_| Table::new(["arm", "replicate", "value"]));
    let mut summaries = Vec::new();
    for (label, sc) in &arms {
        log::info!("simulating arm {label}: {} replicates", sc.replicates);
        let report = run_scenario(sc).map_err(|e| CliError::Numerical(format!("arm {label}: {e}")))?;
        for row in &report.rows {
            let r = row.replicate.to_string();
            metrics_t.push(vec![
                label.clone(),
                r.clone(),
                num(row.mspe),
                num(row.cvg),
                num(row.alci),
            ]);
            for (t, v) in panels.iter_mut().zip([row.cvg, row.mspe, row.alci]) {
                t.push(vec![label.clone(), r.clone(), num(v)]);
            }
        }
        for i in &report.info {
            info_t.push(vec![
                label.clone(),
                i.replicate.to_string(),
                num(i.lengthscale),
                num(i.sigma2),
                opt(i.acceptance_rate),
                opt(i.multiplier),
            ]);
        }
        let [m, c, a] = report.summary();
        let acc: Vec<f64> = report.info.iter().filter_map(|i| i.acceptance_rate).collect();
        summaries.push(ArmSummary {
            label: label.clone(),
            family: sc.model.kernel.family_name().to_string(),
            method: sc.method.label().to_string(),
            replicates: sc.replicates,
            succeeded: report.rows.len(),
            mspe_mean: m.0,
            mspe_sd: m.1,
            cvg_mean: c.0,
            cvg_sd: c.1,
            alci_mean: a.0,
            alci_sd: a.1,
            acceptance_rate_mean: (!acc.is_empty()).then(|| mean_sd(&acc).0),
            failure: report
                .failures
                .iter()
                .map(|(r, m)| FailureEntry {
                    replicate: *r,
                    message: m.clone(),
                })
                .collect(),
        });
    }
    let mut out = Outputs::default();
    out.add_table("metrics.csv", &metrics_t);
    out.add_table("replicates.csv", &info_t);
    for (name, t) in ["panel_cvg.csv", "panel_mspe.csv", "panel_alci.csv"]
        .iter()
        .zip(&panels)
    {
        out.add_table(name, t);
    }
    out.add(
        "summary.txt",
        toml_bytes(&SimulateSummary {
            seed: cfg.seed,
            level: cfg.level,
            arm: summaries,
        }),
    );
    Ok(out)
}

/// Test points on both scales plus original-scale responses when known.
struct TestSet {
    model_x: Points,
    orig_x: Points,
    y: Option<Vec<f64>>,
}

struct Loaded {
    train: Dataset,
    transform: Transform,
    test: Option<TestSet>,
    chain_seed: u64,
}

/// Training data from the data file, or replicate 0 of the scenario.
fn load(cfg: &RunConfig, test_override: Option<PathBuf>) -> CliResult<Loaded> {
    if cfg.data.scenario.is_some() {
        if test_override.is_some() {
            return Err(CliError::config("--test", "test files apply to data.path configs only"));
        }
        let sc = cfg.scenario_config(&cfg.model, &cfg.method)?;
        let (train, x, y) = replicate_data(&sc, 0).map_err(|e| CliError::config("data.scenario", e))?;
        return Ok(Loaded {
            train,
            transform: Transform::identity(),
            test: Some(TestSet {
                model_x: x.clone(),
                orig_x: x,
                y: Some(y),
            }),
            chain_seed: replicate_chain_seed(&sc, 0),
        });
    }
    let path = cfg.data.path.as_ref().expect("validated: data.path or data.scenario");
    let (train, transform) = ingest_csv(path, &cfg.data.preprocess, cfg.data.omega)?;
    let test_path = test_override.or_else(|| cfg.data.test_path.clone());
    let test = match test_path {
        None => None,
        Some(p) => {
            let t = read_table(&p, false)?;
            if t.x.dim() != train.dim() {
                return Err(CliError::Config(format!(
                    "{}: test points have {} coordinates, training data has {}",
                    p.display(),
                    t.x.dim(),
                    train.dim()
                )));
            }
            Some(TestSet {
                model_x: transform.apply_x(&t.x)?,
                orig_x: t.x,
                y: t.y,
            })
        }
    };
    Ok(Loaded {
        train,
        transform,
        test,
        chain_seed: derive_seed(cfg.seed, DATA_CHAIN_STREAM),
    })
}

fn fit_loaded(cfg: &RunConfig, data: &Loaded) -> CliResult<FittedMethod> {
    let method = cfg.method.to_method(&cfg.model, data.train.dim(), "method")?;
    if let rescaled_gp::experiments::Method::Oracle = method {
        return Err(CliError::config(
            "method.kind",
            "the oracle method is only available to simulate",
        ));
    }
    let held_out_y: Option<Vec<f64>> = data
        .test
        .as_ref()
        .and_then(|t| t.y.as_ref())
        .map(|y| y.iter().map(|v| data.transform.apply_y(*v)).collect());
    let held_out = match (&data.test, &held_out_y) {
        (Some(t), Some(y)) if !y.is_empty() => Some((&t.model_x, y.as_slice())),
        _ => None,
    };
    if matches!(method, rescaled_gp::experiments::Method::RescaledTuned { .. }) && held_out.is_none() {
        return Err(CliError::config(
            "data.test_path",
            "rescaled_tuned needs a test file with a y column",
        ));
    }
    Ok(fit_method(
        &method,
        &cfg.model,
        &data.train,
        held_out,
        cfg.level,
        data.chain_seed,
    )?)
}

#[derive(Serialize)]
struct FitSummary {
    family: String,
    method: String,
    n: usize,
    d: usize,
    /// On the transformed response scale.
    omega: f64,
    lengthscale: f64,
    sigma2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    log_likelihood: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    jitter: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    multiplier: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    acceptance_rate: Option<f64>,
    model: CovarianceModel,
    transform: Transform,
}

fn fit_summary(cfg: &RunConfig, data: &Loaded, f: &FittedMethod) -> FitSummary {
    let (model, ll, jitter) = match &f.fit {
        MethodFit::Gp(post) => (
            post.model().clone(),
            Some(post.log_marginal_likelihood()),
            Some(post.jitter_used()),
        ),
        MethodFit::Hier { template, .. } => (template.clone(), None, None),
    };
    FitSummary {
        family: model.kernel.family_name().to_string(),
        method: cfg.method.kind().to_string(),
        n: data.train.len(),
        d: data.train.dim(),
        omega: data.train.omega,
        lengthscale: f.lengthscale,
        sigma2: f.sigma2,
        log_likelihood: ll,
        jitter,
        multiplier: f.multiplier,
        acceptance_rate: f.acceptance_rate,
        model,
        transform: data.transform.clone(),
    }
}

pub fn fit(cfg: &RunConfig, test_override: Option<PathBuf>) -> CliResult<Outputs> {
    let data = load(cfg, test_override)?;
    let f = fit_loaded(cfg, &data)?;
    let mut out = Outputs::default();
    out.add("fit.toml", toml_bytes(&fit_summary(cfg, &data, &f)));
    Ok(out)
}

/// "95" for 0.95; other levels keep their digits.
fn level_tag(level: f64) -> String {
    let pct = level * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{pct}")
    }
}

/// predictions.csv on the original response scale, plus metrics.csv when
/// the test set has responses.
fn prediction_files(cfg: &RunConfig, data: &Loaded, f: &FittedMethod, out: &mut Outputs) -> CliResult<()> {
    let test = data.test.as_ref().ok_or_else(|| {
        CliError::config(
            "data.test_path",
            "prediction needs test points (data.test_path or --test)",
        )
    })?;
    let d = data.train.dim();
    let tag = level_tag(cfg.level);
    let mut header: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    header.extend(["mean".to_string(), format!("lo{tag}"), format!("hi{tag}")]);
    let mut t = Table::new(header);
    let preds: Vec<PointPrediction> = if test.model_x.is_empty() {
        Vec::new()
    } else {
        f.predict(&test.model_x, cfg.level)?
    };
    let tr = &data.transform;
    let back: Vec<(f64, f64, f64)> = preds
        .iter()
        .map(|p| (tr.invert_y(p.mean), tr.invert_y(p.lo), tr.invert_y(p.hi)))
        .collect();
    for (x, (m, lo, hi)) in test.orig_x.iter().zip(&back) {
        let mut row: Vec<String> = x.iter().map(|v| num(*v)).collect();
        row.extend([num(*m), num(*lo), num(*hi)]);
        t.push(row);
    }
    out.add_table("predictions.csv", &t);
    if let Some(y) = &test.y {
        if !y.is_empty() {
            let means: Vec<f64> = back.iter().map(|b| b.0).collect();
            let intervals: Vec<(f64, f64)> = back.iter().map(|b| (b.1, b.2)).collect();
            let m = metrics(&means, &intervals, y)?;
            let mut mt = Table::new(["mspe", "cvg", "alci"]);
            mt.push(vec![num(m.mspe), num(m.cvg), num(m.alci)]);
            out.add_table("metrics.csv", &mt);
        }
    }
    Ok(())
}

pub fn predict(cfg: &RunConfig, test_override: Option<PathBuf>) -> CliResult<Outputs> {
    let data = load(cfg, test_override)?;
    let f = fit_loaded(cfg, &data)?;
    let mut out = Outputs::default();
    prediction_files(cfg, &data, &f, &mut out)?;
    out.add("fit.toml", toml_bytes(&fit_summary(cfg, &data, &f)));
    Ok(out)
}

#[derive(Serialize)]
struct HierSummary {
    k: f64,
    burn_in: usize,
    draws: usize,
    proposal_sd: f64,
    thin: usize,
    acceptance_rate: f64,
    failed_proposals: usize,
    a_mean: f64,
    a_sd: f64,
    a_q025: f64,
    a_q500: f64,
    a_q975: f64,
    lengthscale_mean: f64,
    template: CovarianceModel,
}

/// Empirical quantile by linear interpolation between order statistics.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn hier(cfg: &RunConfig, test_override: Option<PathBuf>) -> CliResult<Outputs> {
    let crate::config::MethodConfig::Hier { k, thin, .. } = cfg.method else {
        return Err(CliError::config(
            "method.kind",
            "the hier command needs kind = \"hier\"",
        ));
    };
    let data = load(cfg, test_override)?;
    let f = fit_loaded(cfg, &data)?;
    let MethodFit::Hier { chain, template, .. } = &f.fit else {
        unreachable!("hier method yields a chain")
    };
    let mut out = Outputs::default();
    let mut t = Table::new(["iteration", "A", "log_posterior", "accepted"]);
    for row in &chain.trace {
        t.push(vec![
            row.iteration.to_string(),
            num(row.a),
            num(row.log_posterior),
            u8::from(row.accepted).to_string(),
        ]);
    }
    out.add_table("chain.csv", &t);
    let mut sorted = chain.samples.clone();
    sorted.sort_by(f64::total_cmp);
    let (a_mean, a_sd) = mean_sd(&chain.samples);
    let summary = HierSummary {
        k,
        burn_in: chain.burn_in,
        draws: chain.samples.len(),
        proposal_sd: chain.proposal_sd,
        thin,
        acceptance_rate: chain.acceptance_rate,
        failed_proposals: chain.failed_proposals,
        a_mean,
        a_sd,
        a_q025: quantile(&sorted, 0.025),
        a_q500: quantile(&sorted, 0.5),
        a_q975: quantile(&sorted, 0.975),
        lengthscale_mean: f.lengthscale,
        template: template.clone(),
    };
    out.add("summary.txt", toml_bytes(&summary));
    if data.test.is_some() {
        prediction_files(cfg, &data, &f, &mut out)?;
    }
    Ok(out)
}

#[derive(Serialize)]
struct RateSummaryRow {
    rule: String,
    exponent: f64,
    slope: f64,
    slope_se: f64,
    intercept: f64,
    target: f64,
    parametric_regime: bool,
}

#[derive(Serialize)]
struct RateSummary {
    seed: u64,
    reps: usize,
    eta: f64,
    schedule: Vec<RateSummaryRow>,
}

fn rule_name(rule: ExponentRule) -> &'static str {
    match rule {
        ExponentRule::Theory => "theory",
        ExponentRule::Doubled => "doubled",
        ExponentRule::Fixed(_) => "fixed",
    }
}

pub fn rate(cfg: &RunConfig) -> CliResult<Outputs> {
    let r = cfg
        .rate
        .as_ref()
        .ok_or_else(|| CliError::config("rate", "the rate command needs a [rate] table"))?;
    let mut base = cfg.scenario_config(&cfg.model, &cfg.method)?;
    base.n_test = r.n_test;
    let mut t = Table::new(["rule", "exponent", "n", "rmse"]);
    let mut rows = Vec::new();
    for rule in &r.rules {
        let s = schedule_for(&cfg.model, r.eta, base.d, *rule, 1.0, "rate")?;
        log::info!("rate: {} schedule, exponent {}", rule_name(*rule), s.exponent());
        let rep = empirical_rate(&base, &r.n_grid, &s, r.reps)?;
        for (n, e) in rep.n_grid.iter().zip(&rep.rmse) {
            t.push(vec![rule_name(*rule).into(), num(s.exponent()), n.to_string(), num(*e)]);
        }
        rows.push(RateSummaryRow {
            rule: rule_name(*rule).into(),
            exponent: s.exponent(),
            slope: rep.slope,
            slope_se: rep.slope_se,
            intercept: rep.intercept,
            target: rep.target,
            parametric_regime: rep.parametric_regime,
        });
    }
    let mut out = Outputs::default();
    out.add_table("rate.csv", &t);
    out.add(
        "summary.txt",
        toml_bytes(&RateSummary {
            seed: cfg.seed,
            reps: r.reps,
            eta: r.eta,
            schedule: rows,
        }),
    );
    Ok(out)
}

#[derive(Serialize)]
struct NoiseSummary {
    note: &'static str,
    radius: f64,
    pairs: usize,
    omega_estimate: f64,
}

/// Convenience estimate of ω on the original response scale. The model
/// treats ω as known; this only helps choose `data.omega`.
pub fn estimate_noise(cfg: &RunConfig, radius: f64) -> CliResult<Outputs> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(CliError::config("--radius", "must be a non-negative number"));
    }
    let path = cfg
        .data
        .path
        .as_ref()
        .ok_or_else(|| CliError::config("data.path", "estimate-noise needs a data file"))?;
    let t = read_table(path, true)?;
    let y = t.y.expect("y column required");
    let (w, pairs) = estimate_noise_from_duplicates(&t.x, &y, radius).ok_or_else(|| {
        CliError::config(
            "--radius",
            format!("no pairs of sites lie within {radius} of each other"),
        )
    })?;
    let mut out = Outputs::default();
    out.add(
        "noise.toml",
        toml_bytes(&NoiseSummary {
            note: "heuristic from near-duplicate sites; not an estimate made by the regression model",
            radius,
            pairs,
            omega_estimate: w,
        }),
    );
    Ok(out)
}
