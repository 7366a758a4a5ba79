//! The ridge-regularized cost is the negative log posterior of a Gaussian
//! prior N(theta0, P0) combined with Gaussian measurement noise, up to a
//! constant. This compares the two at a few points.
//!
//!     cargo run --example map_equivalence

use nalgebra::DVector;
use thevenin_ident::montecarlo::{generate_dataset, McConfig};
use thevenin_ident::solver::{LeastSquaresProblem, Regularized};
use thevenin_ident::workflow::build_problem;
use thevenin_ident::{PriorSpec, TheveninParams};

fn neg_log_posterior(y: &[f64], model: &[f64], var: f64, theta: &[f64], prior: &PriorSpec) -> f64 {
    let data: f64 = y.iter().zip(model).map(|(y, m)| (y - m).powi(2) / var).sum();
    let reg: f64 = (0..theta.len())
        .map(|i| (theta[i] - prior.theta0[i]).powi(2) / prior.p0_diag[i])
        .sum();
    0.5 * (data + reg)
}

fn main() -> thevenin_ident::Result<()> {
    let cfg = McConfig::default();
    let dataset = generate_dataset(&cfg, 0)?;
    let problem = build_problem(&dataset)?;
    let prior = PriorSpec::table1();
    let reg = Regularized::new(&problem, &prior.theta0, &prior.p0_diag)?;

    let nominal = TheveninParams::nominal().theta();
    for scale in [0.9, 1.0, 1.05, 1.2] {
        let theta: Vec<f64> = nominal.iter().map(|v| v * scale).collect();
        let x = DVector::from_vec(theta.clone());
        let predicted = problem.predict(&theta);
        let nlp = neg_log_posterior(&dataset.voltages, &predicted, dataset.noise_variance, &theta, &prior);
        println!("scale {scale:<5} regularized cost {:>16.6}  neg log posterior {:>16.6}", reg.cost(&x), nlp);
    }
    Ok(())
}
