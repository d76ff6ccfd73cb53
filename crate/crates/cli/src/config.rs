//! Run configuration: one TOML document per invocation.

use std::path::{Path, PathBuf};

use rescaled_gp::covariance::{CovarianceModel, Kernel};
use rescaled_gp::experiments::{Method, ScenarioConfig, TruthSpec};
use rescaled_gp::hier::{HierPrior, MhConfig};
use rescaled_gp::mle::MleOptions;
use rescaled_gp::schedules::{ExponentRule, RescalingSchedule};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Base seed; TOML integers are signed, so at most 2^63 − 1.
    #[serde(default)]
    pub seed: u64,
    /// Nominal coverage of the predictive intervals.
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub output: OutputConfig,
    pub data: DataConfig,
    pub model: CovarianceModel,
    pub method: MethodConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<RateConfig>,
    /// Extra (model, method) arms run on the same replicates by `simulate`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compare: Vec<Arm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Training CSV with columns x1..xd, y and optionally omega.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Test CSV with columns x1..xd and optionally y.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    /// Noise variance on the original response scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default)]
    pub preprocess: Preprocess,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioData>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocess {
    /// Coordinates become factor·(x − mean(x)).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_scale: Option<f64>,
    /// Responses become y / max|y|.
    #[serde(default)]
    pub scale_response_by_max: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioData {
    pub d: usize,
    pub n_total: usize,
    pub n_test: usize,
    pub omega: f64,
    pub replicates: usize,
    pub truth: TruthSpec,
}

fn default_budget() -> usize {
    MleOptions::default().budget
}
fn default_restarts() -> usize {
    MleOptions::default().restarts
}
fn default_tune_iterations() -> usize {
    24
}
fn default_multiplier() -> f64 {
    1.0
}
fn default_burn_in() -> usize {
    MhConfig::default().burn_in
}
fn default_draws() -> usize {
    MhConfig::default().draws
}
fn default_proposal_sd() -> f64 {
    MhConfig::default().proposal_sd
}
fn default_thin() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodConfig {
    Mle {
        #[serde(default = "default_budget")]
        budget: usize,
        #[serde(default = "default_restarts")]
        restarts: usize,
    },
    Rescaled {
        eta: f64,
        #[serde(default)]
        exponent: ExponentRule,
        #[serde(default = "default_multiplier")]
        multiplier: f64,
        /// Fixed σ²; fitted by maximum likelihood when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma2: Option<f64>,
    },
    RescaledTuned {
        #[serde(default = "default_budget")]
        budget: usize,
        #[serde(default = "default_restarts")]
        restarts: usize,
        #[serde(default = "default_tune_iterations")]
        iterations: usize,
    },
    Hier {
        k: f64,
        #[serde(default = "default_burn_in")]
        burn_in: usize,
        #[serde(default = "default_draws")]
        draws: usize,
        #[serde(default = "default_proposal_sd")]
        proposal_sd: f64,
        #[serde(default = "default_thin")]
        thin: usize,
        #[serde(default = "default_budget")]
        budget: usize,
        #[serde(default = "default_restarts")]
        restarts: usize,
    },
    Oracle,
}

impl MethodConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            MethodConfig::Mle { .. } => "mle",
            MethodConfig::Rescaled { .. } => "rescaled",
            MethodConfig::RescaledTuned { .. } => "rescaled_tuned",
            MethodConfig::Hier { .. } => "hier",
            MethodConfig::Oracle => "oracle",
        }
    }

    /// The experiment method for `model` in dimension d; `key` names the
    /// config table in error messages.
    pub fn to_method(&self, model: &CovarianceModel, d: usize, key: &str) -> CliResult<Method> {
        let mle = |budget: usize, restarts: usize| MleOptions {
            budget,
            restarts,
            ..MleOptions::default()
        };
        Ok(match *self {
            MethodConfig::Mle { budget, restarts } => Method::Mle {
                options: mle(budget, restarts),
            },
            MethodConfig::Rescaled {
                eta,
                exponent,
                multiplier,
                sigma2,
            } => Method::Rescaled {
                schedule: schedule_for(model, eta, d, exponent, multiplier, key)?,
                sigma2,
            },
            MethodConfig::RescaledTuned {
                budget,
                restarts,
                iterations,
            } => Method::RescaledTuned {
                options: mle(budget, restarts),
                iterations,
            },
            MethodConfig::Hier {
                k,
                burn_in,
                draws,
                proposal_sd,
                thin,
                budget,
                restarts,
            } => {
                HierPrior::new(k, d).map_err(|e| CliError::config(&format!("{key}.k"), e))?;
                if !(proposal_sd > 0.0) {
                    return Err(CliError::config(&format!("{key}.proposal_sd"), "must be positive"));
                }
                if draws == 0 {
                    return Err(CliError::config(&format!("{key}.draws"), "must be at least 1"));
                }
                if thin == 0 || thin >= draws {
                    return Err(CliError::config(
                        &format!("{key}.thin"),
                        format!("must lie in [1, draws = {draws})"),
                    ));
                }
                Method::Hierarchical {
                    k,
                    mh: MhConfig {
                        burn_in,
                        draws,
                        proposal_sd,
                        seed: 0,
                        init_a: None,
                    },
                    thin,
                    options: mle(budget, restarts),
                }
            }
            MethodConfig::Oracle => Method::Oracle,
        })
    }
}

/// Rescaling schedule matching the kernel family of `model`.
pub fn schedule_for(
    model: &CovarianceModel,
    eta: f64,
    d: usize,
    exponent: ExponentRule,
    multiplier: f64,
    key: &str,
) -> CliResult<RescalingSchedule> {
    let s = match model.kernel {
        Kernel::Matern(p) => RescalingSchedule::matern(p.v, eta, d),
        Kernel::Ch(p) => RescalingSchedule::ch(p.v, eta, d, p.alpha),
        Kernel::SqExp(_) => {
            return Err(CliError::config(
                &format!("{key}.kind"),
                "rescaled schedules are defined for the matern and ch families",
            ))
        }
    }
    .map_err(|e| CliError::config(&format!("{key}.eta"), e))?;
    if !(multiplier > 0.0) || !multiplier.is_finite() {
        return Err(CliError::config(&format!("{key}.multiplier"), "must be positive"));
    }
    let s = s.with_rule(exponent).with_multiplier(multiplier);
    s.validate()
        .map_err(|e| CliError::config(&format!("{key}.exponent"), e))?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub label: String,
    pub model: CovarianceModel,
    pub method: MethodConfig,
}

fn default_rate_test() -> usize {
    200
}

fn default_rules() -> Vec<ExponentRule> {
    vec![ExponentRule::Theory]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub eta: f64,
    #[serde(default = "default_rate_test")]
    pub n_test: usize,
    /// Schedules compared on common seeds.
    #[serde(default = "default_rules")]
    pub rules: Vec<ExponentRule>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads and validates a config file. Relative data paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.path, &mut cfg.data.test_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without reading data.
    pub fn validate(&self) -> CliResult<()> {
        // TOML integers are signed.
        if self.seed > i64::MAX as u64 {
            return Err(CliError::config(
                "seed",
                format!("must be at most {}, got {}", i64::MAX, self.seed),
            ));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::config(
                "level",
                format!("must lie in (0, 1), got {}", self.level),
            ));
        }
        match (&self.data.path, &self.data.scenario) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(CliError::config(
                    "data",
                    "set exactly one of data.path and data.scenario",
                ))
            }
            _ => {}
        }
        for (key, p) in [("data.path", &self.data.path), ("data.test_path", &self.data.test_path)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(CliError::config(key, format!("file {} not found", p.display())));
                }
            }
        }
        if let Some(o) = self.data.omega {
            if !(o > 0.0) || !o.is_finite() {
                return Err(CliError::config("data.omega", "must be positive"));
            }
        }
        if let Some(f) = self.data.preprocess.center_scale {
            if !(f > 0.0) || !f.is_finite() {
                return Err(CliError::config("data.preprocess.center_scale", "must be positive"));
            }
        }
        self.model.validate().map_err(|e| CliError::config("model", e))?;
        let d = self.dim_hint();
        self.method.to_method(&self.model, d, "method")?;
        for (i, arm) in self.compare.iter().enumerate() {
            let key = format!("compare[{i}]");
            arm.model
                .validate()
                .map_err(|e| CliError::config(&format!("{key}.model"), e))?;
            arm.method.to_method(&arm.model, d, &format!("{key}.method"))?;
        }
        if self.data.scenario.is_some() {
            for (model, method) in self.arms_raw() {
                self.scenario_config(model, method)?;
            }
        }
        if let Some(r) = &self.rate {
            if r.n_grid.len() < 4 || r.n_grid.windows(2).any(|w| w[1] <= w[0]) || r.n_grid[0] < 2 {
                return Err(CliError::config(
                    "rate.n_grid",
                    "needs at least 4 strictly increasing sizes, all ≥ 2",
                ));
            }
            if r.reps == 0 {
                return Err(CliError::config("rate.reps", "must be at least 1"));
            }
            if r.n_test == 0 {
                return Err(CliError::config("rate.n_test", "must be at least 1"));
            }
            if r.rules.is_empty() {
                return Err(CliError::config("rate.rules", "list at least one exponent rule"));
            }
            for rule in &r.rules {
                schedule_for(&self.model, r.eta, d, *rule, 1.0, "rate")?;
            }
        }
        Ok(())
    }

    /// Dimension from the scenario, or 1 before a data file has been read.
    fn dim_hint(&self) -> usize {
        self.data.scenario.as_ref().map_or(1, |s| s.d)
    }

    fn arms_raw(&self) -> Vec<(&CovarianceModel, &MethodConfig)> {
        std::iter::once((&self.model, &self.method))
            .chain(self.compare.iter().map(|a| (&a.model, &a.method)))
            .collect()
    }

    /// (label, scenario) for the main arm followed by the `compare` arms.
    pub fn arms(&self) -> CliResult<Vec<(String, ScenarioConfig)>> {
        let mut out = vec![(
            default_label(&self.model, &self.method),
            self.scenario_config(&self.model, &self.method)?,
        )];
        for arm in &self.compare {
            out.push((arm.label.clone(), self.scenario_config(&arm.model, &arm.method)?));
        }
        Ok(out)
    }

    pub fn scenario_config(&self, model: &CovarianceModel, method: &MethodConfig) -> CliResult<ScenarioConfig> {
        let s = self
            .data
            .scenario
            .as_ref()
            .ok_or_else(|| CliError::config("data.scenario", "required by this command"))?;
        let cfg = ScenarioConfig {
            d: s.d,
            n_total: s.n_total,
            n_test: s.n_test,
            truth: s.truth.clone(),
            omega: s.omega,
            method: method.to_method(model, s.d, "method")?,
            model: model.clone(),
            replicates: s.replicates,
            seed: self.seed,
            level: self.level,
        };
        cfg.validate().map_err(|e| CliError::config("data.scenario", e))?;
        if let TruthSpec::Brownian { .. } = s.truth {
            if s.d != 1 {
                return Err(CliError::config("data.scenario.truth", "brownian truth requires d = 1"));
            }
        }
        if s.truth == TruthSpec::User {
            return Err(CliError::config(
                "data.scenario.truth",
                "kind = \"user\" is only available from the library",
            ));
        }
        Ok(cfg)
    }
}

/// "<family>-<method>", e.g. "matern-mle".
pub fn default_label(model: &CovarianceModel, method: &MethodConfig) -> String {
    format!("{}-{}", model.kernel.family_name(), method.kind())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7

[data.scenario]
d = 1
n_total = 30
n_test = 10
omega = 1.0
replicates = 2
truth = { kind = "brownian", scale = 100.0 }

[model.kernel]
family = "matern"
v = 2.0
phi = 0.2
sigma2 = 1.0

[method]
kind = "mle"
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.level, 0.95);
        assert_eq!(
            cfg.method,
            MethodConfig::Mle {
                budget: 500,
                restarts: 3
            }
        );
        let again = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn errors_name_the_key() {
        let bad = MINIMAL.replace("kind = \"mle\"", "kind = \"hier\"\nk = 0.5");
        let e = RunConfig::from_toml(&bad).unwrap().validate().unwrap_err();
        assert!(e.to_string().contains("method.k"), "{e}");
        assert_eq!(e.exit_code(), 2);
        let bad = MINIMAL.replace("n_test = 10", "n_test = 30");
        let e = RunConfig::from_toml(&bad).unwrap().validate().unwrap_err();
        assert!(e.to_string().contains("data.scenario"), "{e}");
        let bad = MINIMAL.replace("seed = 7", "seed = 7\nsurprise = 1");
        assert!(RunConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn rescaled_needs_matern_or_ch() {
        let text = MINIMAL
            .replace(
                "family = \"matern\"\nv = 2.0\nphi = 0.2",
                "family = \"sq_exp\"\nc = 0.1",
            )
            .replace("kind = \"mle\"", "kind = \"rescaled\"\neta = 0.5");
        let e = RunConfig::from_toml(&text).unwrap().validate().unwrap_err();
        assert!(e.to_string().contains("method.kind"), "{e}");
    }
}
