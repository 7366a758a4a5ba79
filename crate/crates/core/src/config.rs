//! TOML run configuration.
//!
//! Every section is optional and defaults to the nominal cell, the nominal
//! parameter vector and the coarse prior of [`PriorSpec::table1`]. Unknown
//! keys are rejected. Infinite bounds are written `inf` / `-inf`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CellConstants, TheveninParams, N_PARAMS};
use crate::montecarlo::{Experiment, McConfig};
use crate::profiles::{self, DriveCycleSpec, IntermittentSpec, Schedule};
use crate::solver::TrustRegionConfig;
use crate::workflow::{DatasetMeta, Method, PriorSpec, DEFAULT_NOISE_VARIANCE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Parameter vector used by `simulate` and as Monte Carlo truth.
    pub theta: [f64; N_PARAMS],
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            theta: TheveninParams::nominal().theta(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Constant discharge current, amperes.
    pub current: f64,
    pub duration: f64,
    pub dt: f64,
    pub cutoff_voltage: f64,
    /// Variance of noise added to simulated voltages.
    pub noise_variance: f64,
    pub seed: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            current: -3.0,
            duration: 2400.0,
            dt: 1.0,
            cutoff_voltage: 3.2,
            noise_variance: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentificationSection {
    /// Residual weighting variance, V^2.
    pub noise_variance: f64,
    pub method: Method,
}

impl Default for IdentificationSection {
    fn default() -> Self {
        IdentificationSection {
            noise_variance: DEFAULT_NOISE_VARIANCE,
            method: Method::Cnls,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloSection {
    pub runs: usize,
    pub seed: u64,
    pub noise_variance: f64,
    pub methods: Vec<Method>,
    /// Sequential runs used for the timing table.
    pub timing_runs: usize,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        MonteCarloSection {
            runs: 500,
            seed: 0,
            noise_variance: DEFAULT_NOISE_VARIANCE,
            methods: Method::ALL.to_vec(),
            timing_runs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LambdaSweepSection {
    pub lambdas: Vec<f64>,
}

impl Default for LambdaSweepSection {
    fn default() -> Self {
        LambdaSweepSection {
            lambdas: vec![0.001, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileChoice {
    Constant,
    DriveCycle,
    Intermittent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileSection {
    pub kind: ProfileChoice,
    pub drive_cycle: DriveCycleSpec,
    pub intermittent: IntermittentSpec,
}

impl Default for ProfileSection {
    fn default() -> Self {
        ProfileSection {
            kind: ProfileChoice::Constant,
            drive_cycle: DriveCycleSpec::default(),
            intermittent: IntermittentSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationSection {
    /// Minimum length of a rest window, seconds.
    pub min_rest_s: f64,
    /// SoC at the first logged sample.
    pub initial_soc: f64,
}

impl Default for ValidationSection {
    fn default() -> Self {
        ValidationSection {
            min_rest_s: 3600.0,
            initial_soc: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub cell: CellConstants,
    pub model: ModelSection,
    pub experiment: ExperimentSection,
    pub identification: IdentificationSection,
    pub prior: PriorSpec,
    pub montecarlo: MonteCarloSection,
    pub lambda_sweep: LambdaSweepSection,
    pub solver: TrustRegionConfig,
    pub profile: ProfileSection,
    pub validation: ValidationSection,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.cell.validate()?;
        self.prior.validate()?;
        self.solver.validate()?;
        if !(self.identification.noise_variance > 0.0) {
            return Err(Error::Config("identification.noise_variance must be positive".into()));
        }
        if !(self.experiment.noise_variance >= 0.0) {
            return Err(Error::Config("experiment.noise_variance must be non-negative".into()));
        }
        if !(self.experiment.dt > 0.0) {
            return Err(Error::Config("experiment.dt must be positive".into()));
        }
        if self.montecarlo.methods.is_empty() {
            return Err(Error::Config("montecarlo.methods is empty".into()));
        }
        Ok(())
    }

    pub fn truth(&self) -> TheveninParams {
        TheveninParams::from_theta_raw(self.model.theta, self.cell)
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            cell: self.cell,
            cutoff_voltage: self.experiment.cutoff_voltage,
        }
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            current: self.experiment.current,
            duration: self.experiment.duration,
            dt: self.experiment.dt,
            cell: self.cell,
            cutoff_voltage: self.experiment.cutoff_voltage,
        }
    }

    pub fn mc_config(&self) -> McConfig {
        McConfig {
            runs: self.montecarlo.runs,
            seed: self.montecarlo.seed,
            true_theta: self.model.theta,
            experiment: self.experiment(),
            noise_variance: self.montecarlo.noise_variance,
            methods: self.montecarlo.methods.clone(),
            prior: self.prior.clone(),
            solver: self.solver,
        }
    }

    /// Current schedule for `simulate`.
    pub fn schedule(&self) -> Result<Schedule> {
        match self.profile.kind {
            ProfileChoice::Constant => {
                profiles::constant_discharge(self.experiment.current, self.experiment.duration, self.experiment.dt)
            }
            ProfileChoice::DriveCycle => profiles::drive_cycle(&self.profile.drive_cycle),
            ProfileChoice::Intermittent => profiles::intermittent(&self.profile.intermittent)?
                .truncate_at_cutoff(&self.truth(), self.experiment.cutoff_voltage),
        }
    }
}

/// Seed of the bundled training log; the other bundled logs use the next
/// seeds.
pub const BUNDLED_SEED: u64 = 0xC0FFEE;

/// Recipes for the bundled synthetic logs: a noisy constant-current
/// training discharge, a pulse-and-rest discharge and a drive-cycle log,
/// all generated from the nominal parameters.
pub fn bundled_datasets() -> Vec<(&'static str, Config)> {
    let base = || {
        let mut cfg = Config::default();
        cfg.experiment.noise_variance = DEFAULT_NOISE_VARIANCE;
        cfg
    };
    let mut training = base();
    training.experiment.seed = BUNDLED_SEED;

    let mut intermittent = base();
    intermittent.experiment.seed = BUNDLED_SEED + 1;
    intermittent.profile.kind = ProfileChoice::Intermittent;
    intermittent.profile.intermittent.rest_dt = 60.0;

    let mut drive = base();
    drive.experiment.seed = BUNDLED_SEED + 2;
    drive.profile.kind = ProfileChoice::DriveCycle;

    vec![("training_cc", training), ("intermittent", intermittent), ("udds", drive)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = Config::from_toml("").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.prior, PriorSpec::table1());
    }

    #[test]
    fn infinite_bounds_parse() {
        let text = "[prior]\nlower = [-inf, -inf, -inf, -inf, 0.01, 0.0, 0.0, 0.0, 0.005]\n";
        let cfg = Config::from_toml(text).unwrap();
        assert_eq!(cfg.prior.lower[0], f64::NEG_INFINITY);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(Config::from_toml("[prior]\nlowr = 1\n"), Err(Error::Config(_))));
        assert!(matches!(Config::from_toml("[solver]\ndelta_0 = 1\n"), Err(Error::Config(_))));
        assert!(matches!(Config::from_toml("[typo]\n"), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_prior_rejected() {
        let text = "[prior]\np0_diag = [1, 1, 1, 1, 1, 0, 1, 1, 1]\n";
        assert!(matches!(Config::from_toml(text), Err(Error::NonPositivePrior { index: 5, .. })));
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = Config::default();
        cfg.montecarlo.runs = 100;
        cfg.profile.kind = ProfileChoice::DriveCycle;
        let back = Config::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
