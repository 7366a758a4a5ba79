use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use thevenin_ident::identifiability::{lambda_sweep, sensitivity, NoiseCovariance};
use thevenin_ident::model::{simulate, simulate_at};
use thevenin_ident::montecarlo::nrmse;
use thevenin_ident::solver::{solve_box_constrained, solve_regularized, FnProblem};
use thevenin_ident::{BoxConstraint, CellConstants, CurrentProfile, PriorSpec, SimState, TheveninParams, TrustRegionConfig};

fn params() -> impl Strategy<Value = TheveninParams> {
    (
        prop::array::uniform4(-20.0f64..20.0),
        0.01f64..0.04,
        0.0f64..0.8,
        0.0f64..80.0,
        0.001f64..0.4,
        0.005f64..1.0,
    )
        .prop_map(|(alpha, b0, b1, b2, r, rc_inv)| {
            TheveninParams::from_theta_raw(
                [alpha[0], alpha[1], alpha[2], alpha[3], b0, b1, b2, r, rc_inv],
                CellConstants::nominal(),
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constant_current_simulation_matches_closed_form(p in params(), current in -5.0f64..0.0, dt in 0.5f64..20.0) {
        // stop before the cell is empty
        let t_end = (0.95 * 3600.0 * 2.17 / current.abs().max(1e-3)).min(2400.0);
        let sim = simulate(&p, &CurrentProfile::constant(current), dt, t_end).unwrap();
        for s in &sim.samples {
            let closed = p.voltage_constant_current(current, s.t);
            prop_assert!((s.voltage - closed).abs() <= 1e-9, "t {} diff {}", s.t, s.voltage - closed);
        }
    }

    #[test]
    fn ocv_endpoints_are_pinned(p in params()) {
        prop_assert!((p.ocv(0.0) - 3.3).abs() < 1e-12);
        prop_assert!((p.ocv(1.0) - 4.15).abs() < 1e-11);
    }

    #[test]
    fn discharge_never_raises_soc(p in params(), currents in prop::collection::vec(-4.0f64..0.0, 1..30)) {
        let samples: Vec<(f64, f64)> = currents.iter().enumerate().map(|(k, &i)| (k as f64 * 37.0, i)).collect();
        let profile = CurrentProfile::piecewise(samples).unwrap();
        let times: Vec<f64> = (0..200).map(|k| k as f64 * 6.0).collect();
        let sim = simulate_at(&p, &profile, &times, SimState::rested()).unwrap();
        prop_assert!(sim.samples.windows(2).all(|w| w[1].soc <= w[0].soc));
    }

    #[test]
    fn splitting_the_output_grid_does_not_change_the_state(p in params(), current in -4.0f64..4.0) {
        let profile = CurrentProfile::piecewise(vec![(0.0, current), (100.0, -current), (250.0, 0.0)]).unwrap();
        let coarse = simulate_at(&p, &profile, &[400.0], SimState::rested()).unwrap();
        let fine_times: Vec<f64> = (1..=400).map(f64::from).collect();
        let fine = simulate_at(&p, &profile, &fine_times, SimState::rested()).unwrap();
        let (a, b) = (&coarse.samples[0], fine.samples.last().unwrap());
        prop_assert!((a.v_rc - b.v_rc).abs() < 1e-12);
        prop_assert!((a.soc - b.soc).abs() < 1e-12);
    }

    #[test]
    fn box_solution_is_feasible_and_monotone(
        target in prop::array::uniform3(-10.0f64..10.0),
        start in prop::array::uniform3(-0.99f64..0.99),
    ) {
        // nonlinear residuals with the unconstrained minimum at `target`
        let problem = FnProblem::new(
            3,
            4,
            move |x: &DVector<f64>| DVector::from_vec(vec![
                x[0] - target[0],
                x[1] - target[1],
                x[2] - target[2],
                0.3 * (x[0] * x[1]).sin(),
            ]),
            |x: &DVector<f64>| {
                let c = 0.3 * (x[0] * x[1]).cos();
                DMatrix::from_row_slice(4, 3, &[
                    1.0, 0.0, 0.0,
                    0.0, 1.0, 0.0,
                    0.0, 0.0, 1.0,
                    c * x[1], c * x[0], 0.0,
                ])
            },
        );
        let bounds = BoxConstraint::new(&[-1.0; 3], &[1.0; 3]).unwrap();
        let rep = solve_box_constrained(&problem, &bounds, &start, &TrustRegionConfig::default()).unwrap();
        prop_assert!(bounds.contains(&DVector::from_vec(rep.theta_hat.clone())));
        prop_assert!(rep.cost_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn ridge_with_exact_prior_mean_stays_there(theta0 in prop::array::uniform2(-5.0f64..5.0), p0 in 0.01f64..100.0) {
        // data generated exactly at theta0: the ridge optimum is theta0
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 0.2, 2.0, -1.0, 1.0]);
        let y = &a * DVector::from_column_slice(&theta0);
        let a_jac = a.clone();
        let problem = FnProblem::new(2, 3, move |x: &DVector<f64>| &a * x - &y, move |_: &DVector<f64>| a_jac.clone());
        let rep = solve_regularized(&problem, &theta0, &[p0, p0], &[0.0, 0.0], &TrustRegionConfig::default()).unwrap();
        for i in 0..2 {
            prop_assert!((rep.theta_hat[i] - theta0[i]).abs() < 1e-7 * theta0[i].abs().max(1.0));
        }
    }

    #[test]
    fn nrmse_is_zero_iff_all_estimates_exact(scale in prop::collection::vec(0.5f64..1.5, 1..20)) {
        let truth = TheveninParams::nominal().theta();
        let exact = vec![truth; scale.len()];
        prop_assert!(nrmse(&exact, &truth).iter().all(|v| *v == 0.0));
        let perturbed: Vec<[f64; 9]> = scale.iter().map(|s| truth.map(|t| t * s)).collect();
        let e = nrmse(&perturbed, &truth);
        let expected = (scale.iter().map(|s| (s - 1.0).powi(2)).sum::<f64>() / scale.len() as f64).sqrt();
        for v in e {
            prop_assert!((v - expected).abs() <= 1e-12 * expected.max(1e-300));
        }
    }
}

#[test]
fn ridge_bias_shrinks_on_a_dense_lambda_grid() {
    let truth = TheveninParams::nominal();
    let times: Vec<f64> = (0..=2400).map(f64::from).collect();
    let s = sensitivity(&truth, &times, -3.0);
    let prior = PriorSpec::table1();
    let lambdas: Vec<f64> = (0..=200).map(|k| 1e-3 * (5.0f64 / 1e-3).powf(k as f64 / 200.0)).collect();
    let reps = lambda_sweep(&s, &NoiseCovariance::Scalar(2.5e-5), &truth.theta(), &prior.theta0, &prior.p0_diag, &lambdas)
        .unwrap();
    for w in reps.windows(2) {
        assert!(w[1].bias_term <= w[0].bias_term);
        assert!(w[1].variance_term >= w[0].variance_term);
    }
}
