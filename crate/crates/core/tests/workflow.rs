use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use thevenin_ident::model::simulate_at;
use thevenin_ident::montecarlo::{generate_dataset, McConfig};
use thevenin_ident::profiles::{drive_cycle, intermittent, DriveCycleSpec, IntermittentSpec};
use thevenin_ident::solver::{minimize, LeastSquaresProblem, Regularized};
use thevenin_ident::workflow::{
    build_problem, extract_rest_points, identify, validate_lumped_resistance, validate_soc_ocv, validate_voltage,
    DatasetMeta, DischargeDataset, DEFAULT_NOISE_VARIANCE,
};
use thevenin_ident::{BoxConstraint, Method, PriorSpec, SimState, TheveninParams, TrustRegionConfig};

fn random_theta(rng: &mut ChaCha8Rng) -> [f64; 9] {
    let nominal = TheveninParams::nominal().theta();
    let prior = PriorSpec::table1();
    std::array::from_fn(|i| {
        if prior.lower[i].is_finite() {
            // stay off the bounds where some partials vanish
            let (lo, hi) = (prior.lower[i], prior.upper[i]);
            lo + (hi - lo) * rng.random_range(0.05..0.95)
        } else {
            nominal[i] * rng.random_range(0.5..1.5)
        }
    })
}

fn noisy_dataset(
    params: &TheveninParams,
    schedule: &thevenin_ident::profiles::Schedule,
    sigma: f64,
    seed: u64,
) -> DischargeDataset {
    let sim = simulate_at(params, &schedule.profile, &schedule.times, SimState::rested()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let voltages = sim
        .samples
        .iter()
        .map(|s| s.voltage + sigma * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    DischargeDataset::new(
        schedule.times.clone(),
        schedule.currents(),
        voltages,
        DEFAULT_NOISE_VARIANCE,
        DatasetMeta::default(),
    )
    .unwrap()
}

#[test]
fn weighted_cost_at_truth_has_chi_square_mean() {
    let cfg = McConfig::default();
    let truth = DVector::from_column_slice(&cfg.true_theta);
    let n = cfg.experiment.times().len() as f64;
    let mean_cost = (0..500)
        .map(|k| build_problem(&generate_dataset(&cfg, k).unwrap()).unwrap().cost(&truth))
        .sum::<f64>()
        / 500.0;
    let ratio = mean_cost / (0.5 * n);
    assert!((ratio - 1.0).abs() < 0.05, "E[J] / (N/2) = {ratio}");
}

#[test]
fn jacobian_matches_finite_differences_at_random_points() {
    let cfg = McConfig {
        noise_variance: 0.0,
        ..McConfig::default()
    };
    let problem = build_problem(&generate_dataset(&cfg, 0).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..20 {
        let theta = DVector::from_column_slice(&random_theta(&mut rng));
        let jac = problem.jacobian(&theta);
        for j in 0..9 {
            let h = 1e-6 * theta[j].abs().max(1e-3);
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (problem.residuals(&up) - problem.residuals(&dn)) / (2.0 * h);
            let col = jac.column(j);
            let err = (&fd - col).amax() / col.amax();
            assert!(err <= 1e-5, "column {j}: relative error {err:e}");
        }
    }
}

#[test]
fn unbounded_box_equals_benchmark_iterate_for_iterate() {
    let cfg = McConfig::default();
    let ds = generate_dataset(&cfg, 5).unwrap();
    let mut prior = PriorSpec::table1();
    prior.lower = [f64::NEG_INFINITY; 9];
    prior.upper = [f64::INFINITY; 9];
    let solver = TrustRegionConfig::default();
    let boxed = identify(&ds, &prior, Method::Cnls, &solver).unwrap();
    let free = identify(&ds, &prior, Method::Benchmark, &solver).unwrap();
    assert_eq!(boxed.report.cost_trace, free.report.cost_trace);
    assert_eq!(boxed.report.theta_hat, free.report.theta_hat);
}

#[test]
fn ridge_cost_does_not_exceed_prior_mean_or_start() {
    let cfg = McConfig::default();
    let prior = PriorSpec::table1();
    for k in 0..5 {
        let ds = generate_dataset(&cfg, k).unwrap();
        let problem = build_problem(&ds).unwrap();
        let id = identify(&ds, &prior, Method::Rnls, &TrustRegionConfig::default()).unwrap();
        let reg = Regularized::new(&problem, &prior.theta0, &prior.p0_diag).unwrap();
        let at = |x: &[f64]| reg.cost(&DVector::from_column_slice(x));
        assert!(id.report.cost <= at(&prior.theta0));
        assert!(id.report.cost <= at(&prior.initial_guess));
        assert!((id.report.cost - at(&id.report.theta_hat)).abs() <= 1e-9 * id.report.cost);
    }
}

#[test]
fn identified_models_keep_ocv_endpoints() {
    let cfg = McConfig::default();
    let ds = generate_dataset(&cfg, 9).unwrap();
    for method in Method::ALL {
        let id = identify(&ds, &PriorSpec::table1(), method, &TrustRegionConfig::default()).unwrap();
        assert!((id.params.ocv(0.0) - 3.3).abs() < 1e-12, "{method}");
        assert!((id.params.ocv(1.0) - 4.15).abs() < 1e-12, "{method}");
    }
}

#[test]
fn box_constrained_estimates_respect_bounds() {
    let cfg = McConfig::default();
    let prior = PriorSpec::table1();
    let bounds = prior.bounds().unwrap();
    for k in 0..10 {
        let id = identify(&generate_dataset(&cfg, k).unwrap(), &prior, Method::Cnls, &TrustRegionConfig::default())
            .unwrap();
        assert!(bounds.contains(&DVector::from_vec(id.report.theta_hat.clone())));
    }
}

#[test]
fn cost_trace_is_monotone_on_battery_problem() {
    let cfg = McConfig::default();
    let ds = generate_dataset(&cfg, 3).unwrap();
    let problem = build_problem(&ds).unwrap();
    let prior = PriorSpec::table1();
    for bounds in [BoxConstraint::unbounded(9), prior.bounds().unwrap()] {
        let rep = minimize(&problem, &bounds, &prior.initial_guess, &TrustRegionConfig::default()).unwrap();
        assert!(rep.cost_trace.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn noise_free_replay_is_exact() {
    let params = TheveninParams::nominal();
    let schedule = drive_cycle(&DriveCycleSpec::default()).unwrap();
    let ds = noisy_dataset(&params, &schedule, 0.0, 0);
    let rep = validate_voltage(&params, &ds).unwrap();
    assert!(rep.max_abs_error <= 1e-9, "{}", rep.max_abs_error);
}

#[test]
fn drive_cycle_replay_error_is_the_injected_noise() {
    let params = TheveninParams::nominal();
    let schedule = drive_cycle(&DriveCycleSpec::default()).unwrap();
    let sigma = DEFAULT_NOISE_VARIANCE.sqrt();
    let ds = noisy_dataset(&params, &schedule, sigma, 17);
    let rep = validate_voltage(&params, &ds).unwrap();
    assert!((rep.rms_error / sigma - 1.0).abs() < 0.10, "rms {}", rep.rms_error);
    // summary statistics agree with the stored series
    let rms = (rep.points.iter().map(|p| p.error * p.error).sum::<f64>() / rep.points.len() as f64).sqrt();
    assert_eq!(rms, rep.rms_error);
}

#[test]
fn rested_voltages_recover_the_true_ocv() {
    let params = TheveninParams::nominal();
    let schedule = intermittent(&IntermittentSpec::default())
        .unwrap()
        .truncate_at_cutoff(&params, 3.2)
        .unwrap();
    let ds = noisy_dataset(&params, &schedule, 0.0, 0);
    let points = extract_rest_points(&ds, 3600.0, 1.0);
    assert!(points.ocv.len() >= 10, "{} rest windows", points.ocv.len());
    let ocv = validate_soc_ocv(&params, &points.ocv);
    assert!(ocv.max_abs_error <= 1e-3, "{}", ocv.max_abs_error);

    // recovery over one pulse is |I| (R0 + R) up to the 1 s of charge between samples
    let res = validate_lumped_resistance(&params, &points.recovery);
    assert_eq!(res.points.len(), points.recovery.len());
    assert!(res.max_abs_error <= 1e-3, "{}", res.max_abs_error);
}
