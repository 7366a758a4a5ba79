//! Repeated synthetic identifications and their statistics.
//!
//! Noise for run `k` is drawn from an independent ChaCha stream selected by
//! `(seed, k)`, so any run can be regenerated alone and parallel scheduling
//! never changes the numbers.

use std::path::Path;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identifiability::{sensitivity, theoretical_accuracy_cnls, theoretical_accuracy_rnls, NoiseCovariance};
use crate::io::{fmt_f64, write_table};
use crate::model::{CellConstants, TheveninParams, N_PARAMS, PARAM_NAMES};
use crate::solver::TrustRegionConfig;
use crate::workflow::{build_problem, identify_problem, DatasetMeta, DischargeDataset, Method, PriorSpec, DEFAULT_NOISE_VARIANCE};

pub const HISTOGRAM_BINS: usize = 30;
/// Largest tolerated fraction of failed runs per method.
pub const MAX_FAILURE_FRACTION: f64 = 0.10;

/// Constant-current discharge experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    pub current: f64,
    pub duration: f64,
    pub dt: f64,
    pub cell: CellConstants,
    pub cutoff_voltage: f64,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            current: -3.0,
            duration: 2400.0,
            dt: 1.0,
            cell: CellConstants::nominal(),
            cutoff_voltage: 3.2,
        }
    }
}

impl Experiment {
    pub fn times(&self) -> Vec<f64> {
        let n = (self.duration / self.dt + 1e-9).floor() as usize;
        (0..=n).map(|k| k as f64 * self.dt).collect()
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            cell: self.cell,
            cutoff_voltage: self.cutoff_voltage,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub runs: usize,
    pub seed: u64,
    pub true_theta: [f64; N_PARAMS],
    pub experiment: Experiment,
    /// Variance of the injected noise, V^2. Zero gives exact model output.
    pub noise_variance: f64,
    pub methods: Vec<Method>,
    pub prior: PriorSpec,
    pub solver: TrustRegionConfig,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            runs: 500,
            seed: 0,
            true_theta: TheveninParams::nominal().theta(),
            experiment: Experiment::default(),
            noise_variance: DEFAULT_NOISE_VARIANCE,
            methods: vec![Method::Benchmark, Method::Cnls, Method::Rnls],
            prior: PriorSpec::table1(),
            solver: TrustRegionConfig::default(),
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("montecarlo: runs must be at least 1".into()));
        }
        if !(self.experiment.dt > 0.0) || !(self.experiment.duration >= 0.0) {
            return Err(Error::Config("experiment: dt must be positive and duration non-negative".into()));
        }
        if !(self.noise_variance >= 0.0) {
            return Err(Error::Config("noise variance must be non-negative".into()));
        }
        self.experiment.cell.validate()?;
        self.prior.validate()?;
        self.solver.validate()
    }

    pub fn truth(&self) -> TheveninParams {
        TheveninParams::from_theta_raw(self.true_theta, self.experiment.cell)
    }

    /// Variance used to weight residuals. Noise-free studies fall back to
    /// the default so the ridge penalty keeps its usual balance.
    pub fn weight_variance(&self) -> f64 {
        if self.noise_variance > 0.0 {
            self.noise_variance
        } else {
            DEFAULT_NOISE_VARIANCE
        }
    }
}

/// Random stream for one run.
pub fn run_rng(seed: u64, run_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run_index);
    rng
}

/// Noisy constant-current discharge for run `run_index`.
pub fn generate_dataset(cfg: &McConfig, run_index: u64) -> Result<DischargeDataset> {
    let truth = cfg.truth();
    let exp = &cfg.experiment;
    let times = exp.times();
    let sigma = cfg.noise_variance.sqrt();
    let mut rng = run_rng(cfg.seed, run_index);
    let voltages = times
        .iter()
        .map(|&t| {
            let w: f64 = StandardNormal.sample(&mut rng);
            truth.voltage_constant_current(exp.current, t) + sigma * w
        })
        .collect();
    let currents = vec![exp.current; times.len()];
    DischargeDataset::new(times, currents, voltages, cfg.weight_variance(), exp.meta())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lower: f64,
    pub upper: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Fixed-count bins over `[min, max]` of the values.
    pub fn build(values: &[f64], bins: usize) -> Self {
        let lower = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let upper = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0; bins];
        let width = (upper - lower) / bins as f64;
        for &v in values {
            let k = if width > 0.0 {
                (((v - lower) / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[k] += 1;
        }
        Histogram { lower, upper, counts }
    }

    pub fn edges(&self, k: usize) -> (f64, f64) {
        let width = (self.upper - self.lower) / self.counts.len() as f64;
        (self.lower + k as f64 * width, self.lower + (k + 1) as f64 * width)
    }
}

/// Per-method outcome of a study.
#[derive(Debug, Clone)]
pub struct MethodStats {
    pub method: Method,
    /// `(run index, estimate)` for every successful run, in run order.
    pub estimates: Vec<(u64, [f64; N_PARAMS])>,
    pub wall_times: Vec<Duration>,
    pub iterations: Vec<usize>,
    pub failed: usize,
    pub nrmse: [f64; N_PARAMS],
    pub mean: [f64; N_PARAMS],
    /// Population covariance (divisor M) of the estimates.
    pub covariance: DMatrix<f64>,
    pub histograms: Vec<Histogram>,
}

impl MethodStats {
    pub fn mean_wall_time_ms(&self) -> f64 {
        mean_ms(&self.wall_times)
    }

    pub fn mean_iterations(&self) -> f64 {
        self.iterations.iter().sum::<usize>() as f64 / self.iterations.len().max(1) as f64
    }
}

fn mean_ms(times: &[Duration]) -> f64 {
    times.iter().map(|d| d.as_secs_f64() * 1e3).sum::<f64>() / times.len().max(1) as f64
}

/// `sqrt(mean_k (x_k - truth)^2 / truth^2)` per coordinate.
pub fn nrmse(estimates: &[[f64; N_PARAMS]], truth: &[f64; N_PARAMS]) -> [f64; N_PARAMS] {
    let m = estimates.len().max(1) as f64;
    std::array::from_fn(|i| {
        let ss: f64 = estimates.iter().map(|e| (e[i] - truth[i]).powi(2)).sum();
        (ss / m / (truth[i] * truth[i])).sqrt()
    })
}

pub fn mean_and_covariance(estimates: &[[f64; N_PARAMS]]) -> ([f64; N_PARAMS], DMatrix<f64>) {
    let m = estimates.len().max(1) as f64;
    let mean: [f64; N_PARAMS] = std::array::from_fn(|i| estimates.iter().map(|e| e[i]).sum::<f64>() / m);
    let mu = DVector::from_column_slice(&mean);
    let mut cov = DMatrix::zeros(N_PARAMS, N_PARAMS);
    for e in estimates {
        let d = DVector::from_column_slice(e) - &mu;
        cov += &d * d.transpose();
    }
    (mean, cov / m)
}

#[derive(Debug, Clone)]
pub struct McReport {
    pub runs: usize,
    pub seed: u64,
    pub true_theta: [f64; N_PARAMS],
    pub methods: Vec<MethodStats>,
    /// Predicted NRMSE of the box-constrained estimator; absent for
    /// noise-free studies.
    pub theoretical_cnls: Option<[f64; N_PARAMS]>,
    pub theoretical_rnls: Option<[f64; N_PARAMS]>,
}

impl McReport {
    pub fn method(&self, method: Method) -> Option<&MethodStats> {
        self.methods.iter().find(|m| m.method == method)
    }

    /// Writes `nrmse.csv`, `estimates.csv`, `histogram_<param>.csv`,
    /// `covariance_<method>.csv` and `timing.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        let params = PARAM_NAMES.iter().map(|s| s.to_string());

        let mut header = vec!["method".to_string(), "kind".to_string()];
        header.extend(params.clone());
        let mut rows = Vec::new();
        for m in &self.methods {
            rows.push(labelled(m.method.name(), "empirical", &m.nrmse));
        }
        if let Some(t) = &self.theoretical_cnls {
            rows.push(labelled("cnls", "theoretical", t));
        }
        if let Some(t) = &self.theoretical_rnls {
            rows.push(labelled("rnls", "theoretical", t));
        }
        write_table(&dir.join("nrmse.csv"), &header, rows)?;

        let mut header = vec!["run".to_string(), "method".to_string()];
        header.extend(params.clone());
        let rows = self.methods.iter().flat_map(|m| {
            m.estimates.iter().map(move |(run, e)| {
                let mut row = vec![run.to_string(), m.method.name().to_string()];
                row.extend(e.iter().map(|v| fmt_f64(*v)));
                row
            })
        });
        write_table(&dir.join("estimates.csv"), &header, rows)?;

        let header: Vec<String> = ["method", "bin", "lower", "upper", "count"].map(String::from).to_vec();
        for (p, name) in PARAM_NAMES.iter().enumerate() {
            let rows = self.methods.iter().flat_map(|m| {
                let h = &m.histograms[p];
                (0..h.counts.len()).map(move |k| {
                    let (lo, hi) = h.edges(k);
                    vec![
                        m.method.name().to_string(),
                        k.to_string(),
                        fmt_f64(lo),
                        fmt_f64(hi),
                        h.counts[k].to_string(),
                    ]
                })
            });
            write_table(&dir.join(format!("histogram_{name}.csv")), &header, rows)?;
        }

        for m in &self.methods {
            let mut header = vec!["param".to_string()];
            header.extend(params.clone());
            let rows = (0..N_PARAMS).map(|i| {
                let mut row = vec![PARAM_NAMES[i].to_string()];
                row.extend((0..N_PARAMS).map(|j| fmt_f64(m.covariance[(i, j)])));
                row
            });
            write_table(&dir.join(format!("covariance_{}.csv", m.method.name())), &header, rows)?;
        }

        let header: Vec<String> = ["method", "runs", "failed", "mean_wall_time_ms", "mean_iterations"]
            .map(String::from)
            .to_vec();
        let rows = self.methods.iter().map(|m| {
            vec![
                m.method.name().to_string(),
                m.estimates.len().to_string(),
                m.failed.to_string(),
                fmt_f64(m.mean_wall_time_ms()),
                fmt_f64(m.mean_iterations()),
            ]
        });
        write_table(&dir.join("timing.csv"), &header, rows)
    }
}

fn labelled(method: &str, kind: &str, values: &[f64; N_PARAMS]) -> Vec<String> {
    let mut row = vec![method.to_string(), kind.to_string()];
    row.extend(values.iter().map(|v| fmt_f64(*v)));
    row
}

struct RunOutcome {
    theta: [f64; N_PARAMS],
    wall_time: Duration,
    iterations: usize,
}

fn run_once(cfg: &McConfig, run_index: u64) -> Result<Vec<Result<RunOutcome>>> {
    let dataset = generate_dataset(cfg, run_index)?;
    let problem = build_problem(&dataset)?;
    Ok(cfg
        .methods
        .iter()
        .map(|&method| {
            let id = identify_problem(&problem, &cfg.prior, method, &cfg.solver)?;
            Ok(RunOutcome {
                theta: id.params.theta(),
                wall_time: id.report.wall_time,
                iterations: id.report.iterations,
            })
        })
        .collect())
}

/// Predicted per-parameter NRMSE for the box-constrained and ridge
/// estimators on the study's design.
pub fn theoretical_nrmse(cfg: &McConfig) -> Result<Option<([f64; N_PARAMS], [f64; N_PARAMS])>> {
    if !(cfg.noise_variance > 0.0) {
        return Ok(None);
    }
    let s = sensitivity(&cfg.truth(), &cfg.experiment.times(), cfg.experiment.current);
    let q = NoiseCovariance::Scalar(cfg.noise_variance);
    let c = theoretical_accuracy_cnls(&s, &q)?;
    let r = theoretical_accuracy_rnls(&s, &q, &cfg.true_theta, &cfg.prior.theta0, &cfg.prior.p0_diag)?;
    Ok(Some((c.per_param_nrmse_theoretical, r.per_param_nrmse_theoretical)))
}

/// Runs the study in parallel and reduces the results in run order.
pub fn run_study(cfg: &McConfig) -> Result<McReport> {
    cfg.validate()?;
    let outcomes: Vec<Vec<Result<RunOutcome>>> = (0..cfg.runs as u64)
        .into_par_iter()
        .map(|k| run_once(cfg, k))
        .collect::<Result<_>>()?;

    let mut methods = Vec::with_capacity(cfg.methods.len());
    for (mi, &method) in cfg.methods.iter().enumerate() {
        let mut estimates = Vec::new();
        let mut wall_times = Vec::new();
        let mut iterations = Vec::new();
        let mut failed = 0;
        for (k, run) in outcomes.iter().enumerate() {
            match &run[mi] {
                Ok(o) => {
                    estimates.push((k as u64, o.theta));
                    wall_times.push(o.wall_time);
                    iterations.push(o.iterations);
                }
                Err(e) => {
                    log::warn!("run {k}, {method}: {e}");
                    failed += 1;
                }
            }
        }
        if failed as f64 > MAX_FAILURE_FRACTION * cfg.runs as f64 {
            return Err(Error::TooManyFailures {
                failed,
                total: cfg.runs,
            });
        }
        if failed > 0 {
            log::info!("{method}: {failed} of {} runs excluded", cfg.runs);
        }
        let thetas: Vec<[f64; N_PARAMS]> = estimates.iter().map(|e| e.1).collect();
        let (mean, covariance) = mean_and_covariance(&thetas);
        let histograms = (0..N_PARAMS)
            .map(|i| Histogram::build(&thetas.iter().map(|t| t[i]).collect::<Vec<_>>(), HISTOGRAM_BINS))
            .collect();
        methods.push(MethodStats {
            method,
            nrmse: nrmse(&thetas, &cfg.true_theta),
            mean,
            covariance,
            histograms,
            estimates,
            wall_times,
            iterations,
            failed,
        });
    }

    let theory = theoretical_nrmse(cfg)?;
    Ok(McReport {
        runs: cfg.runs,
        seed: cfg.seed,
        true_theta: cfg.true_theta,
        methods,
        theoretical_cnls: theory.map(|t| t.0),
        theoretical_rnls: theory.map(|t| t.1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingSummary {
    pub method: Method,
    pub runs: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
}

/// Sequential wall-clock comparison over `runs` datasets; each dataset is
/// solved by every method back to back so all see the same machine state.
pub fn timing_comparison(cfg: &McConfig, runs: usize) -> Result<Vec<TimingSummary>> {
    cfg.validate()?;
    let mut times: Vec<Vec<Duration>> = vec![Vec::with_capacity(runs); cfg.methods.len()];
    // one untimed pass to warm caches and the allocator
    if runs > 0 {
        let _ = run_once(cfg, 0)?;
    }
    for k in 0..runs as u64 {
        for (mi, outcome) in run_once(cfg, k)?.into_iter().enumerate() {
            if let Ok(o) = outcome {
                times[mi].push(o.wall_time);
            }
        }
    }
    Ok(cfg
        .methods
        .iter()
        .zip(times)
        .map(|(&method, mut t)| {
            t.sort();
            let median_ms = t.get(t.len() / 2).map_or(f64::NAN, |d| d.as_secs_f64() * 1e3);
            TimingSummary {
                method,
                runs: t.len(),
                mean_ms: mean_ms(&t),
                median_ms,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(runs: usize) -> McConfig {
        McConfig {
            runs,
            seed: 7,
            // coarse sampling of the full discharge keeps every parameter identifiable
            experiment: Experiment {
                dt: 12.0,
                ..Experiment::default()
            },
            ..McConfig::default()
        }
    }

    #[test]
    fn noise_free_dataset_is_model_output() {
        let cfg = McConfig {
            noise_variance: 0.0,
            ..small(1)
        };
        let ds = generate_dataset(&cfg, 3).unwrap();
        let truth = cfg.truth();
        for (t, v) in ds.times.iter().zip(&ds.voltages) {
            assert_eq!(*v, truth.voltage_constant_current(-3.0, *t));
        }
    }

    #[test]
    fn datasets_regenerate_bit_identically() {
        let cfg = small(1);
        let a = generate_dataset(&cfg, 11).unwrap();
        let b = generate_dataset(&cfg, 11).unwrap();
        let c = generate_dataset(&cfg, 12).unwrap();
        assert_eq!(a.voltages, b.voltages);
        assert_ne!(a.voltages, c.voltages);
    }

    #[test]
    fn noise_variance_matches() {
        let cfg = McConfig {
            experiment: Experiment::default(),
            ..small(1)
        };
        let truth = cfg.truth();
        let mut ss = 0.0;
        let mut n = 0usize;
        for k in 0..500 {
            let ds = generate_dataset(&cfg, k).unwrap();
            for (t, v) in ds.times.iter().zip(&ds.voltages) {
                ss += (v - truth.voltage_constant_current(-3.0, *t)).powi(2);
                n += 1;
            }
        }
        let var = ss / n as f64;
        assert!((var / 2.5e-5 - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn exact_start_gives_zero_nrmse() {
        let truth = TheveninParams::nominal().theta();
        let cfg = McConfig {
            noise_variance: 0.0,
            methods: vec![Method::Benchmark, Method::Cnls, Method::Rnls],
            prior: PriorSpec {
                initial_guess: truth,
                theta0: truth,
                ..PriorSpec::table1()
            },
            ..small(1)
        };
        let rep = run_study(&cfg).unwrap();
        for m in &rep.methods {
            assert!(m.nrmse.iter().all(|e| *e < 1e-12), "{}: {:?}", m.method, m.nrmse);
        }
        assert!(rep.theoretical_cnls.is_none());
    }

    #[test]
    fn nrmse_is_bias_plus_variance() {
        let truth = [1.0, 2.0, -3.0, 4.0, 0.5, 0.25, 10.0, 0.03, 0.02];
        let estimates: Vec<[f64; N_PARAMS]> = (0..37)
            .map(|k| std::array::from_fn(|i| truth[i] * (1.0 + 0.01 * ((k * (i + 3)) % 7) as f64 - 0.02)))
            .collect();
        let n = nrmse(&estimates, &truth);
        let (mean, cov) = mean_and_covariance(&estimates);
        for i in 0..N_PARAMS {
            let expected = (((mean[i] - truth[i]).powi(2) + cov[(i, i)]) / (truth[i] * truth[i])).sqrt();
            assert!((n[i] - expected).abs() <= 1e-12 * expected.max(1e-300));
        }
    }

    #[test]
    fn histogram_counts_everything() {
        let v: Vec<f64> = (0..100).map(|k| (k as f64).sqrt()).collect();
        let h = Histogram::build(&v, HISTOGRAM_BINS);
        assert_eq!(h.counts.iter().sum::<usize>(), 100);
        assert_eq!(h.counts.len(), 30);
        let flat = Histogram::build(&[2.0; 5], HISTOGRAM_BINS);
        assert_eq!(flat.counts[0], 5);
    }

    #[test]
    fn method_isolation() {
        let both = run_study(&McConfig {
            methods: vec![Method::Benchmark, Method::Cnls],
            ..small(4)
        })
        .unwrap();
        let alone = run_study(&McConfig {
            methods: vec![Method::Cnls],
            ..small(4)
        })
        .unwrap();
        assert_eq!(
            both.method(Method::Cnls).unwrap().estimates,
            alone.method(Method::Cnls).unwrap().estimates
        );
    }

    #[test]
    fn small_problem_is_fast() {
        let cfg = McConfig {
            experiment: Experiment {
                duration: 19.0,
                ..Experiment::default()
            },
            methods: vec![Method::Cnls, Method::Rnls],
            ..small(1)
        };
        let t = timing_comparison(&cfg, 3).unwrap();
        assert!(t.iter().all(|s| s.mean_ms < 1000.0));
    }
}
