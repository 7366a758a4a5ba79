//! Command-line front end.
//!
//! Every command reads an optional TOML config, writes its artifacts into
//! `--out`, and maps failures onto exit codes 2 (parse), 3 (numerical) and
//! 4 (config) with a JSON error record on stderr.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::identifiability::{
    lambda_sweep, rank_check, rank_of, sensitivity, theoretical_accuracy_cnls, theoretical_accuracy_rnls,
    NoiseCovariance, RankReport,
};
use crate::io::{fmt_f64, load_dataset, save_dataset, write_columns, write_json, write_table};
use crate::model::{simulate_at, SimState, TheveninParams, N_PARAMS, PARAM_NAMES};
use crate::montecarlo::{run_rng, run_study, timing_comparison};
use crate::solver::TerminationReason;
use crate::workflow::{
    build_problem, extract_rest_points, fit_series, identify_problem, validate_lumped_resistance, validate_soc_ocv,
    validate_voltage_from, DerivedQuantities, DischargeDataset, Identification, Method, ValidationReport,
};

#[derive(Debug, Clone, Parser)]
#[command(name = "thevenin-ident", version, about = "One-RC Thevenin battery model identification")]
pub struct CliConfig {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the noise seed of `simulate` and `montecarlo`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ValidationMode {
    /// Replay the logged current and compare voltages.
    Voltage,
    /// Rest-window OCV and lumped-resistance comparison.
    Intermittent,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Writes `simulated.csv` from the configured parameters and profile.
    Simulate,
    /// Fits a constant-current log; writes `solve_report.json` and `fit.csv`.
    Identify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        method: Option<Method>,
    },
    /// Rank test and predicted accuracy at the configured parameters.
    Identifiability,
    /// Monte Carlo study; writes the NRMSE, estimate, histogram and timing tables.
    Montecarlo,
    /// Variance and bias of the ridge estimator as the prior is scaled.
    LambdaSweep,
    /// Compares a parameter set against a log.
    Validate {
        #[arg(long)]
        input: PathBuf,
        /// `solve_report.json` from `identify`, or nine comma-separated values.
        #[arg(long)]
        params: Option<String>,
        #[arg(long, value_enum, default_value_t = ValidationMode::Voltage)]
        mode: ValidationMode,
    },
}

/// JSON written by `identify`.
#[derive(Debug, Clone, Serialize)]
pub struct SolveRecord {
    pub method: Method,
    pub theta_hat: [f64; N_PARAMS],
    pub derived: DerivedQuantities,
    pub cost: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub evaluations: usize,
    pub termination_reason: TerminationReason,
    pub gradient_norm: f64,
    pub wall_time_ms: f64,
}

impl From<&Identification> for SolveRecord {
    fn from(id: &Identification) -> Self {
        SolveRecord {
            method: id.method,
            theta_hat: id.params.theta(),
            derived: id.derived,
            cost: id.report.cost,
            iterations: id.report.iterations,
            accepted_steps: id.report.accepted_steps,
            evaluations: id.report.evaluations,
            termination_reason: id.report.termination_reason,
            gradient_norm: id.report.gradient_norm,
            wall_time_ms: id.report.wall_time.as_secs_f64() * 1e3,
        }
    }
}

#[derive(Debug, Serialize)]
struct ErrorRecord<'a> {
    class: &'a str,
    exit_code: i32,
    message: String,
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = CliConfig::parse();
    match run_command(&cli) {
        Ok(artifacts) => {
            for a in artifacts {
                log::info!("wrote {}", a.display());
            }
            0
        }
        Err(e) => report_error(&e),
    }
}

/// Prints the machine-readable error record and returns its exit code.
pub fn report_error(e: &Error) -> i32 {
    let class = e.class();
    let record = ErrorRecord {
        class: class.name(),
        exit_code: class.exit_code(),
        message: e.to_string(),
    };
    eprintln!("{}", serde_json::json!({ "error": record }));
    class.exit_code()
}

fn require_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ))
    }
}

fn load_config(cli: &CliConfig) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.experiment.seed = seed;
        cfg.montecarlo.seed = seed;
    }
    Ok(cfg)
}

/// Runs one command; returns the written artifact paths.
pub fn run_command(cli: &CliConfig) -> Result<Vec<PathBuf>> {
    if let Some(p) = &cli.config {
        require_exists(p)?;
    }
    match &cli.command {
        Command::Identify { input, .. } | Command::Validate { input, .. } => require_exists(input)?,
        _ => {}
    }
    if let Command::Validate { params: Some(p), .. } = &cli.command {
        if !looks_like_numbers(p) {
            require_exists(Path::new(p))?;
        }
    }
    let cfg = load_config(cli)?;
    fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Simulate => simulate_cmd(&cfg, out),
        Command::Identify { input, method } => identify_cmd(&cfg, input, method.unwrap_or(cfg.identification.method), out),
        Command::Identifiability => identifiability_cmd(&cfg, out),
        Command::Montecarlo => montecarlo_cmd(&cfg, out),
        Command::LambdaSweep => lambda_sweep_cmd(&cfg, out),
        Command::Validate { input, params, mode } => validate_cmd(&cfg, input, params.as_deref(), *mode, out),
    }
}

/// Simulated log of the configured model, with optional additive noise.
pub fn simulate_dataset(cfg: &Config) -> Result<DischargeDataset> {
    let truth = cfg.truth();
    let schedule = cfg.schedule()?;
    let sim = simulate_at(&truth, &schedule.profile, &schedule.times, SimState::rested())?;
    let sigma = cfg.experiment.noise_variance.sqrt();
    let mut rng = run_rng(cfg.experiment.seed, 0);
    let voltages = sim
        .samples
        .iter()
        .map(|s| {
            let w: f64 = StandardNormal.sample(&mut rng);
            s.voltage + sigma * w
        })
        .collect();
    DischargeDataset::new(
        schedule.times.clone(),
        schedule.currents(),
        voltages,
        cfg.identification.noise_variance,
        cfg.meta(),
    )
}

fn simulate_cmd(cfg: &Config, out: &Path) -> Result<Vec<PathBuf>> {
    let ds = simulate_dataset(cfg)?;
    let path = out.join("simulated.csv");
    save_dataset(&path, &ds)?;
    Ok(vec![path])
}

fn identify_cmd(cfg: &Config, input: &Path, method: Method, out: &Path) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(input, cfg.identification.noise_variance, cfg.meta())?;
    let problem = build_problem(&ds)?;
    let id = identify_problem(&problem, &cfg.prior, method, &cfg.solver)?;
    let report = out.join("solve_report.json");
    write_json(&report, &SolveRecord::from(&id))?;

    let pts = fit_series(&problem, &ds, &id.params.theta());
    let cols = |f: fn(&crate::workflow::ValidationPoint) -> f64| pts.iter().map(f).collect::<Vec<_>>();
    let (t, m, p, e) = (cols(|p| p.x), cols(|p| p.measured), cols(|p| p.predicted), cols(|p| p.error));
    let fit = out.join("fit.csv");
    write_columns(
        &fit,
        &[("t_s", &t), ("measured_v", &m), ("fitted_v", &p), ("residual_v", &e)],
    )?;
    Ok(vec![report, fit])
}

#[derive(Debug, Serialize)]
struct IdentifiabilityRecord {
    samples: usize,
    full: RankReport,
    /// Rank after dropping each parameter's column, in parameter order.
    rank_without: Vec<usize>,
    locally_identifiable: bool,
}

fn identifiability_cmd(cfg: &Config, out: &Path) -> Result<Vec<PathBuf>> {
    let truth = cfg.truth();
    let exp = cfg.experiment();
    let s = sensitivity(&truth, &exp.times(), exp.current);
    let full = rank_check(&s)?;
    let rank_without = (0..N_PARAMS).map(|j| rank_of(&s.without_column(j)).rank).collect();
    let record = IdentifiabilityRecord {
        samples: s.n_rows(),
        locally_identifiable: full.rank == N_PARAMS,
        full,
        rank_without,
    };
    let json = out.join("identifiability.json");
    write_json(&json, &record)?;

    let q = NoiseCovariance::Scalar(cfg.identification.noise_variance);
    let c = theoretical_accuracy_cnls(&s, &q)?;
    let r = theoretical_accuracy_rnls(&s, &q, &cfg.model.theta, &cfg.prior.theta0, &cfg.prior.p0_diag)?;
    let header: Vec<String> = [
        "param",
        "theta",
        "cnls_std",
        "cnls_nrmse",
        "rnls_std",
        "rnls_bias",
        "rnls_nrmse",
    ]
    .map(String::from)
    .to_vec();
    let theta = truth.theta();
    let rows = (0..N_PARAMS).map(|i| {
        vec![
            PARAM_NAMES[i].to_string(),
            fmt_f64(theta[i]),
            fmt_f64(c.cov[(i, i)].sqrt()),
            fmt_f64(c.per_param_nrmse_theoretical[i]),
            fmt_f64(r.cov[(i, i)].sqrt()),
            fmt_f64(r.bias[i]),
            fmt_f64(r.per_param_nrmse_theoretical[i]),
        ]
    });
    let table = out.join("theoretical_accuracy.csv");
    write_table(&table, &header, rows)?;
    Ok(vec![json, table])
}

fn montecarlo_cmd(cfg: &Config, out: &Path) -> Result<Vec<PathBuf>> {
    let mc = cfg.mc_config();
    let report = run_study(&mc)?;
    report.write_csv(out)?;
    let mut written: Vec<PathBuf> = ["nrmse.csv", "estimates.csv", "timing.csv"]
        .iter()
        .map(|f| out.join(f))
        .collect();
    if cfg.montecarlo.timing_runs > 0 {
        let timing = timing_comparison(&mc, cfg.montecarlo.timing_runs)?;
        let header: Vec<String> = ["method", "runs", "mean_ms", "median_ms"].map(String::from).to_vec();
        let rows = timing.iter().map(|t| {
            vec![
                t.method.name().to_string(),
                t.runs.to_string(),
                fmt_f64(t.mean_ms),
                fmt_f64(t.median_ms),
            ]
        });
        let path = out.join("timing_sequential.csv");
        write_table(&path, &header, rows)?;
        written.push(path);
    }
    Ok(written)
}

fn lambda_sweep_cmd(cfg: &Config, out: &Path) -> Result<Vec<PathBuf>> {
    let exp = cfg.experiment();
    let s = sensitivity(&cfg.truth(), &exp.times(), exp.current);
    let q = NoiseCovariance::Scalar(cfg.identification.noise_variance);
    let lambdas = &cfg.lambda_sweep.lambdas;
    let reports = lambda_sweep(&s, &q, &cfg.model.theta, &cfg.prior.theta0, &cfg.prior.p0_diag, lambdas)?;
    let variance: Vec<f64> = reports.iter().map(|r| r.variance_term).collect();
    let bias: Vec<f64> = reports.iter().map(|r| r.bias_term).collect();
    let total: Vec<f64> = reports.iter().map(|r| r.total()).collect();
    let path = out.join("lambda_sweep.csv");
    write_columns(
        &path,
        &[("lambda", lambdas), ("variance", &variance), ("bias", &bias), ("total", &total)],
    )?;
    Ok(vec![path])
}

fn looks_like_numbers(s: &str) -> bool {
    s.split(',').count() == N_PARAMS && s.split(',').all(|v| v.trim().parse::<f64>().is_ok())
}

/// Reads `theta_hat` from a `solve_report.json`, or parses nine
/// comma-separated numbers.
pub fn parse_params(spec: &str, cfg: &Config) -> Result<TheveninParams> {
    let theta: Vec<f64> = if looks_like_numbers(spec) {
        spec.split(',').map(|v| v.trim().parse().unwrap()).collect()
    } else {
        let path = Path::new(spec);
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let arr = value
            .get("theta_hat")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "no `theta_hat` array".into(),
            })?;
        arr.iter()
            .map(|v| {
                v.as_f64().ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    message: "`theta_hat` holds a non-number".into(),
                })
            })
            .collect::<Result<_>>()?
    };
    if theta.len() != N_PARAMS {
        return Err(Error::Config(format!("expected {N_PARAMS} parameters, got {}", theta.len())));
    }
    Ok(TheveninParams::from_slice_raw(&theta, cfg.cell))
}

fn write_report(report: &ValidationReport, out: &Path, stem: &str, x_name: &str) -> Result<Vec<PathBuf>> {
    let json = out.join(format!("{stem}.json"));
    write_json(&json, report)?;
    let col = |f: fn(&crate::workflow::ValidationPoint) -> f64| report.points.iter().map(f).collect::<Vec<_>>();
    let (x, m, p, e) = (col(|p| p.x), col(|p| p.measured), col(|p| p.predicted), col(|p| p.error));
    let csv = out.join(format!("{stem}.csv"));
    write_columns(&csv, &[(x_name, &x), ("measured", &m), ("predicted", &p), ("error", &e)])?;
    Ok(vec![json, csv])
}

fn validate_cmd(
    cfg: &Config,
    input: &Path,
    params: Option<&str>,
    mode: ValidationMode,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(input, cfg.identification.noise_variance, cfg.meta())?;
    let params = match params {
        Some(spec) => parse_params(spec, cfg)?,
        None => cfg.truth(),
    };
    match mode {
        ValidationMode::Voltage => {
            let rep = validate_voltage_from(&params, &ds, SimState::at_soc(cfg.validation.initial_soc))?;
            write_report(&rep, out, "validation_voltage", "t_s")
        }
        ValidationMode::Intermittent => {
            let pts = extract_rest_points(&ds, cfg.validation.min_rest_s, cfg.validation.initial_soc);
            let mut written = write_report(&validate_soc_ocv(&params, &pts.ocv), out, "validation_soc_ocv", "soc")?;
            written.extend(write_report(
                &validate_lumped_resistance(&params, &pts.recovery),
                out,
                "validation_lumped_resistance",
                "soc",
            )?);
            Ok(written)
        }
    }
}
