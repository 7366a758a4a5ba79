//! Identification and validation workflows on measured or synthetic data.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identifiability::sensitivity_row;
use crate::model::{simulate_at, CellConstants, CurrentProfile, SimState, TheveninParams, N_PARAMS};
use crate::solver::{
    solve_box_constrained, solve_regularized, solve_unconstrained, BoxConstraint, LeastSquaresProblem,
    SolveReport, TrustRegionConfig,
};

pub const DEFAULT_NOISE_VARIANCE: f64 = 2.5e-5;
pub const CONSTANT_CURRENT_REL_TOL: f64 = 1e-6;
/// Below this magnitude the cell is considered at rest, amperes.
pub const REST_CURRENT_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub cell: CellConstants,
    pub cutoff_voltage: f64,
}

impl Default for DatasetMeta {
    fn default() -> Self {
        DatasetMeta {
            cell: CellConstants::nominal(),
            cutoff_voltage: 3.2,
        }
    }
}

/// Time-stamped current/voltage log.
#[derive(Debug, Clone, PartialEq)]
pub struct DischargeDataset {
    pub times: Vec<f64>,
    pub currents: Vec<f64>,
    pub voltages: Vec<f64>,
    /// Variance of the additive voltage noise, V^2.
    pub noise_variance: f64,
    pub meta: DatasetMeta,
}

impl DischargeDataset {
    pub fn new(
        times: Vec<f64>,
        currents: Vec<f64>,
        voltages: Vec<f64>,
        noise_variance: f64,
        meta: DatasetMeta,
    ) -> Result<Self> {
        if times.len() != currents.len() || times.len() != voltages.len() {
            return Err(Error::InvalidParameter(format!(
                "column lengths differ: {} / {} / {}",
                times.len(),
                currents.len(),
                voltages.len()
            )));
        }
        for (row, w) in times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::NonMonotoneTime { row: row + 1, t: w[1] });
            }
        }
        if let Some(&t0) = times.first() {
            if t0 < 0.0 {
                return Err(Error::InvalidParameter(format!("negative start time {t0}")));
            }
        }
        if !(noise_variance >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be non-negative, got {noise_variance}"
            )));
        }
        meta.cell.validate()?;
        Ok(DischargeDataset {
            times,
            currents,
            voltages,
            noise_variance,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// The common current value, if every sample agrees within `rel_tol`.
    pub fn constant_current(&self, rel_tol: f64) -> Result<f64> {
        let &reference = self.currents.first().ok_or(Error::EmptyDataset)?;
        let tol = rel_tol * reference.abs().max(f64::MIN_POSITIVE);
        for (index, &value) in self.currents.iter().enumerate() {
            if (value - reference).abs() > tol {
                return Err(Error::NonConstantCurrent {
                    index,
                    value,
                    reference,
                });
            }
        }
        Ok(reference)
    }

    /// Current held constant from each sample to the next, starting at t = 0.
    pub fn current_profile(&self) -> Result<CurrentProfile> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut samples: Vec<(f64, f64)> = self
            .times
            .iter()
            .copied()
            .zip(self.currents.iter().copied())
            .collect();
        if samples[0].0 > 0.0 {
            // rest before the first logged sample
            samples.insert(0, (0.0, 0.0));
        }
        CurrentProfile::piecewise(samples)
    }

    /// Coulomb-counted SoC at every sample, starting from `soc0`.
    pub fn soc_series(&self, soc0: f64) -> Vec<f64> {
        let k = self.meta.cell.soc_per_coulomb();
        let mut soc = soc0;
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            if i > 0 {
                soc += self.currents[i - 1] * (self.times[i] - self.times[i - 1]) * k;
            }
            out.push(soc);
        }
        out
    }
}

/// Charge removed over the log, ampere-hours. Current is held from each
/// sample to the next; charging intervals are ignored.
pub fn capacity_from_log(dataset: &DischargeDataset) -> f64 {
    dataset
        .times
        .windows(2)
        .zip(&dataset.currents)
        .map(|(w, &i)| (-i).max(0.0) * (w[1] - w[0]))
        .sum::<f64>()
        / 3600.0
}

/// Prior knowledge for the three estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub initial_guess: [f64; N_PARAMS],
    pub lower: [f64; N_PARAMS],
    pub upper: [f64; N_PARAMS],
    pub theta0: [f64; N_PARAMS],
    pub p0_diag: [f64; N_PARAMS],
}

impl PriorSpec {
    /// Coarse setting read off a constant-current discharge curve.
    pub fn table1() -> Self {
        let inf = f64::INFINITY;
        let guess = [1.0, 1.0, 1.0, 1.0, 0.029, 0.4, 40.0, 0.2, 1.0 / 40.0];
        PriorSpec {
            initial_guess: guess,
            lower: [-inf, -inf, -inf, -inf, 0.01, 0.0, 0.0, 0.0, 1.0 / 200.0],
            upper: [inf, inf, inf, inf, 0.04, 0.8, 80.0, 0.4, 1.0],
            theta0: guess,
            p0_diag: [
                50.0f64.powi(2),
                50.0f64.powi(2),
                50.0f64.powi(2),
                50.0f64.powi(2),
                0.001f64.powi(2),
                0.1f64.powi(2),
                10.0f64.powi(2),
                0.06f64.powi(2),
                0.005f64.powi(2),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bounds = self.bounds()?;
        let guess = DVector::from_column_slice(&self.initial_guess);
        if !bounds.contains(&guess) {
            return Err(Error::Config("initial guess lies outside the bounds".into()));
        }
        if let Some((index, &value)) = self
            .p0_diag
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0))
        {
            return Err(Error::NonPositivePrior { index, value });
        }
        Ok(())
    }

    pub fn bounds(&self) -> Result<BoxConstraint> {
        BoxConstraint::new(&self.lower, &self.upper)
    }

    pub fn with_prior_scale(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        for p in out.p0_diag.iter_mut() {
            *p *= lambda;
        }
        out
    }
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self::table1()
    }
}

/// Estimator choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Plain nonlinear least squares.
    Benchmark,
    /// Box-constrained.
    Cnls,
    /// Ridge-regularized.
    Rnls,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Benchmark, Method::Cnls, Method::Rnls];

    pub fn name(self) -> &'static str {
        match self {
            Method::Benchmark => "benchmark",
            Method::Cnls => "cnls",
            Method::Rnls => "rnls",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "benchmark" | "nls" => Ok(Method::Benchmark),
            "cnls" | "c-nls" => Ok(Method::Cnls),
            "rnls" | "r-nls" => Ok(Method::Rnls),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Weighted residual of a constant-current discharge,
/// `r_k = (y_k - phi(theta; t_k)) / sigma`.
#[derive(Debug, Clone)]
pub struct DischargeProblem {
    times: Vec<f64>,
    voltages: Vec<f64>,
    current: f64,
    inv_sigma: f64,
    cell: CellConstants,
}

impl DischargeProblem {
    pub fn cell(&self) -> &CellConstants {
        &self.cell
    }

    pub fn current(&self) -> f64 {
        self.current
    }

    pub fn params_at(&self, x: &[f64]) -> TheveninParams {
        TheveninParams::from_slice_raw(x, self.cell)
    }

    /// Model voltage at every sample.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let p = self.params_at(x);
        self.times
            .iter()
            .map(|&t| p.voltage_constant_current(self.current, t))
            .collect()
    }
}

impl LeastSquaresProblem for DischargeProblem {
    fn n_params(&self) -> usize {
        N_PARAMS
    }

    fn n_residuals(&self) -> usize {
        self.times.len()
    }

    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = self.params_at(x.as_slice());
        DVector::from_iterator(
            self.times.len(),
            self.times
                .iter()
                .zip(&self.voltages)
                .map(|(&t, &y)| (y - p.voltage_constant_current(self.current, t)) * self.inv_sigma),
        )
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let p = self.params_at(x.as_slice());
        let mut jac = DMatrix::zeros(self.times.len(), N_PARAMS);
        let mut row = [0.0; N_PARAMS];
        let scale = -self.inv_sigma;
        for (k, &t) in self.times.iter().enumerate() {
            sensitivity_row(&p, self.current, t, &mut row);
            for j in 0..N_PARAMS {
                jac[(k, j)] = row[j] * scale;
            }
        }
        jac
    }
}

/// Assembles the weighted least-squares problem for a constant-current log.
pub fn build_problem(dataset: &DischargeDataset) -> Result<DischargeProblem> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let current = dataset.constant_current(CONSTANT_CURRENT_REL_TOL)?;
    if !(dataset.noise_variance > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "identification needs a positive noise variance, got {}",
            dataset.noise_variance
        )));
    }
    Ok(DischargeProblem {
        times: dataset.times.clone(),
        voltages: dataset.voltages.clone(),
        current,
        inv_sigma: 1.0 / dataset.noise_variance.sqrt(),
        cell: dataset.meta.cell,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedQuantities {
    pub alpha0: f64,
    pub alpha5: f64,
    pub capacitance_f: f64,
}

impl From<&TheveninParams> for DerivedQuantities {
    fn from(p: &TheveninParams) -> Self {
        DerivedQuantities {
            alpha0: p.alpha0(),
            alpha5: p.alpha5(),
            capacitance_f: p.capacitance(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Identification {
    pub method: Method,
    pub report: SolveReport,
    pub params: TheveninParams,
    pub derived: DerivedQuantities,
}

/// Runs one estimator on an already-assembled problem.
pub fn identify_problem(
    problem: &DischargeProblem,
    prior: &PriorSpec,
    method: Method,
    cfg: &TrustRegionConfig,
) -> Result<Identification> {
    let report = match method {
        Method::Benchmark => solve_unconstrained(problem, &prior.initial_guess, cfg)?,
        Method::Cnls => solve_box_constrained(problem, &prior.bounds()?, &prior.initial_guess, cfg)?,
        Method::Rnls => solve_regularized(problem, &prior.theta0, &prior.p0_diag, &prior.initial_guess, cfg)?,
    };
    let params = problem.params_at(&report.theta_hat);
    Ok(Identification {
        method,
        derived: DerivedQuantities::from(&params),
        params,
        report,
    })
}

pub fn identify(
    dataset: &DischargeDataset,
    prior: &PriorSpec,
    method: Method,
    cfg: &TrustRegionConfig,
) -> Result<Identification> {
    let problem = build_problem(dataset)?;
    identify_problem(&problem, prior, method, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationKind {
    Voltage,
    SocOcv,
    LumpedResistance,
}

/// One compared point. `x` is time for voltage replays and SoC otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationPoint {
    pub x: f64,
    pub measured: f64,
    pub predicted: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub kind: ValidationKind,
    pub rms_error: f64,
    pub max_abs_error: f64,
    pub points: Vec<ValidationPoint>,
}

impl ValidationReport {
    fn from_points(kind: ValidationKind, points: Vec<ValidationPoint>) -> Self {
        let n = points.len().max(1) as f64;
        let rms_error = (points.iter().map(|p| p.error * p.error).sum::<f64>() / n).sqrt();
        let max_abs_error = points.iter().map(|p| p.error.abs()).fold(0.0, f64::max);
        ValidationReport {
            kind,
            rms_error,
            max_abs_error,
            points,
        }
    }

    /// Fraction of points with `|error| < threshold`.
    pub fn fraction_within(&self, threshold: f64) -> f64 {
        if self.points.is_empty() {
            return 1.0;
        }
        self.points.iter().filter(|p| p.error.abs() < threshold).count() as f64 / self.points.len() as f64
    }
}

/// Replays the logged current through the model and compares voltages.
pub fn validate_voltage(params: &TheveninParams, dataset: &DischargeDataset) -> Result<ValidationReport> {
    validate_voltage_from(params, dataset, SimState::rested())
}

pub fn validate_voltage_from(
    params: &TheveninParams,
    dataset: &DischargeDataset,
    init: SimState,
) -> Result<ValidationReport> {
    let profile = dataset.current_profile()?;
    let sim = simulate_at(params, &profile, &dataset.times, init)?;
    let points = sim
        .samples
        .iter()
        .zip(&dataset.voltages)
        .map(|(s, &measured)| ValidationPoint {
            x: s.t,
            measured,
            predicted: s.voltage,
            error: measured - s.voltage,
        })
        .collect();
    Ok(ValidationReport::from_points(ValidationKind::Voltage, points))
}

/// Compares rested voltages, tagged with SoC, against the model OCV.
pub fn validate_soc_ocv(params: &TheveninParams, points: &[(f64, f64)]) -> ValidationReport {
    let pts = points
        .iter()
        .map(|&(soc, measured)| {
            let predicted = params.ocv(soc);
            ValidationPoint {
                x: soc,
                measured,
                predicted,
                error: measured - predicted,
            }
        })
        .collect();
    ValidationReport::from_points(ValidationKind::SocOcv, pts)
}

/// A voltage recovery observed when the current is interrupted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecoveryPoint {
    pub soc: f64,
    /// Rested voltage minus the last loaded voltage, volts.
    pub recovery: f64,
    /// Current before the pause, amperes.
    pub current: f64,
}

/// Compares `recovery / |I|` against the model's `R0(SoC) + R`.
pub fn validate_lumped_resistance(params: &TheveninParams, points: &[RecoveryPoint]) -> ValidationReport {
    let pts = points
        .iter()
        .map(|p| {
            let measured = p.recovery / p.current.abs();
            let predicted = params.r0(p.soc) + params.r;
            ValidationPoint {
                x: p.soc,
                measured,
                predicted,
                error: measured - predicted,
            }
        })
        .collect();
    ValidationReport::from_points(ValidationKind::LumpedResistance, pts)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IntermittentPoints {
    /// `(SoC, rested voltage)` at the end of each rest window.
    pub ocv: Vec<(f64, f64)>,
    pub recovery: Vec<RecoveryPoint>,
}

/// Finds rest windows (|I| below 1 mA for at least `min_rest_s`) in an
/// intermittent-discharge log and extracts OCV and recovery points.
pub fn extract_rest_points(dataset: &DischargeDataset, min_rest_s: f64, soc0: f64) -> IntermittentPoints {
    let soc = dataset.soc_series(soc0);
    let n = dataset.len();
    let resting = |i: usize| dataset.currents[i].abs() < REST_CURRENT_THRESHOLD;
    let mut out = IntermittentPoints::default();
    let mut i = 0;
    while i < n {
        if !resting(i) {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < n && resting(i + 1) {
            i += 1;
        }
        let end = i;
        i += 1;
        if dataset.times[end] - dataset.times[start] < min_rest_s {
            continue;
        }
        out.ocv.push((soc[end], dataset.voltages[end]));
        if start > 0 && !resting(start - 1) {
            out.recovery.push(RecoveryPoint {
                soc: soc[start],
                recovery: dataset.voltages[end] - dataset.voltages[start - 1],
                current: dataset.currents[start - 1],
            });
        }
    }
    out
}

/// Measured vs. fitted voltage on the identification data.
pub fn fit_series(problem: &DischargeProblem, dataset: &DischargeDataset, theta: &[f64]) -> Vec<ValidationPoint> {
    problem
        .predict(theta)
        .into_iter()
        .zip(dataset.times.iter().zip(&dataset.voltages))
        .map(|(predicted, (&t, &measured))| ValidationPoint {
            x: t,
            measured,
            predicted,
            error: measured - predicted,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(theta: &TheveninParams, n: usize) -> DischargeDataset {
        let times: Vec<f64> = (0..n).map(|k| k as f64).collect();
        let voltages = times.iter().map(|&t| theta.voltage_constant_current(-3.0, t)).collect();
        DischargeDataset::new(times, vec![-3.0; n], voltages, DEFAULT_NOISE_VARIANCE, DatasetMeta::default())
            .unwrap()
    }

    #[test]
    fn residual_vanishes_at_truth() {
        let truth = TheveninParams::nominal();
        let ds = synthetic(&truth, 2401);
        let problem = build_problem(&ds).unwrap();
        let r = problem.residuals(&DVector::from_column_slice(&truth.theta()));
        assert!(r.amax() < 1e-9);
    }

    #[test]
    fn rejects_empty_and_varying_current() {
        let empty = DischargeDataset::new(vec![], vec![], vec![], 1e-4, DatasetMeta::default()).unwrap();
        assert!(matches!(build_problem(&empty), Err(Error::EmptyDataset)));

        let mut ds = synthetic(&TheveninParams::nominal(), 10);
        ds.currents[4] = -2.9;
        assert!(matches!(build_problem(&ds), Err(Error::NonConstantCurrent { index: 4, .. })));
        // jitter inside tolerance is fine
        ds.currents[4] = -3.0 * (1.0 + 1e-8);
        assert!(build_problem(&ds).is_ok());
    }

    #[test]
    fn zero_noise_start_at_truth_converges_immediately() {
        let truth = TheveninParams::nominal();
        let ds = synthetic(&truth, 2401);
        let prior = PriorSpec {
            initial_guess: truth.theta(),
            ..PriorSpec::table1()
        };
        for method in [Method::Benchmark, Method::Cnls] {
            let id = identify(&ds, &prior, method, &TrustRegionConfig::default()).unwrap();
            assert!(id.report.iterations <= 2, "{method}: {} iterations", id.report.iterations);
            assert!(id.report.cost <= 1e-16, "{method}: cost {}", id.report.cost);
        }
    }

    #[test]
    fn derived_quantities_attached() {
        let truth = TheveninParams::nominal();
        let ds = synthetic(&truth, 400);
        let prior = PriorSpec {
            initial_guess: truth.theta(),
            ..PriorSpec::table1()
        };
        let id = identify(&ds, &prior, Method::Cnls, &TrustRegionConfig::default()).unwrap();
        assert_eq!(id.derived.alpha0, 3.3);
        assert!((id.derived.alpha5 - 6.9).abs() < 1e-6);
        assert!((id.derived.capacitance_f - truth.capacitance()).abs() < 1e-3);
    }

    #[test]
    fn ocv_validation_endpoints() {
        let p = TheveninParams::nominal();
        let rep = validate_soc_ocv(&p, &[(0.0, 3.31), (1.0, 4.12)]);
        assert!((rep.points[0].error - (3.31 - 3.3)).abs() < 1e-12);
        assert!((rep.points[1].error - (4.12 - 4.15)).abs() < 1e-12);
        let exact: Vec<(f64, f64)> = (0..=10).map(|k| (k as f64 / 10.0, p.ocv(k as f64 / 10.0))).collect();
        assert_eq!(validate_soc_ocv(&p, &exact).max_abs_error, 0.0);
    }

    #[test]
    fn lumped_resistance_values() {
        let p = TheveninParams::nominal();
        let full = p.r0(1.0) + p.r;
        assert!((full - (0.0313 + 0.0678 * (-13.2f64).exp() + 0.0313)).abs() < 1e-15);
        assert!(((p.r0(0.0) + p.r) - 0.1304).abs() < 1e-12);
        let exact = RecoveryPoint {
            soc: 0.4,
            recovery: 2.0 * (p.r0(0.4) + p.r),
            current: -2.0,
        };
        assert!(validate_lumped_resistance(&p, &[exact]).max_abs_error < 1e-15);
    }

    #[test]
    fn zero_current_replay_stays_at_full_ocv() {
        let p = TheveninParams::nominal();
        let times: Vec<f64> = (0..100).map(|k| k as f64 * 5.0).collect();
        let ds = DischargeDataset::new(times, vec![0.0; 100], vec![4.15; 100], 1e-4, DatasetMeta::default()).unwrap();
        let rep = validate_voltage(&p, &ds).unwrap();
        assert!(rep.points.iter().all(|pt| (pt.predicted - 4.15).abs() < 1e-12));
    }

    #[test]
    fn capacity_by_coulomb_counting() {
        let times: Vec<f64> = (0..=3600).map(|k| k as f64).collect();
        let mut currents = vec![-2.0; 3601];
        currents[1800..].iter_mut().for_each(|c| *c = 0.5); // charging is not counted
        let ds = DischargeDataset::new(times, currents, vec![3.7; 3601], 1e-4, DatasetMeta::default()).unwrap();
        assert!((capacity_from_log(&ds) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn method_parsing() {
        assert_eq!("CNLS".parse::<Method>().unwrap(), Method::Cnls);
        assert_eq!("r-nls".parse::<Method>().unwrap(), Method::Rnls);
        assert!("gauss".parse::<Method>().is_err());
    }

    #[test]
    fn table1_prior_is_valid() {
        PriorSpec::table1().validate().unwrap();
    }
}
