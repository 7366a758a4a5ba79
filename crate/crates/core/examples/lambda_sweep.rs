//! Variance and bias of the ridge estimator as the prior covariance is
//! scaled by lambda.
//!
//!     cargo run --example lambda_sweep

use thevenin_ident::identifiability::{lambda_sweep, log_grid, sensitivity, theoretical_accuracy_cnls, NoiseCovariance};
use thevenin_ident::{PriorSpec, TheveninParams};

fn main() -> thevenin_ident::Result<()> {
    let truth = TheveninParams::nominal();
    let times: Vec<f64> = (0..=2400).map(f64::from).collect();
    let s = sensitivity(&truth, &times, -3.0);
    let q = NoiseCovariance::Scalar(2.5e-5);
    let prior = PriorSpec::table1();

    let lambdas = log_grid(1e-3, 5.0, 15);
    let reports = lambda_sweep(&s, &q, &truth.theta(), &prior.theta0, &prior.p0_diag, &lambdas)?;
    println!("{:>10} {:>12} {:>12} {:>12}", "lambda", "variance", "bias", "total");
    for (l, r) in lambdas.iter().zip(&reports) {
        println!("{l:>10.4} {:>12.4} {:>12.4e} {:>12.4}", r.variance_term, r.bias_term, r.total());
    }
    let cnls = theoretical_accuracy_cnls(&s, &q)?;
    println!("\nunregularized limit: {:.4}", cnls.total());
    Ok(())
}
