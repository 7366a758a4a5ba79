//! Local identifiability of all nine parameters from one discharge:
//! sensitivity rank, conditioning and the predicted estimation accuracy.
//!
//!     cargo run --example identifiability_analysis

use thevenin_ident::identifiability::{
    rank_check, rank_of, sensitivity, theoretical_accuracy_cnls, theoretical_accuracy_rnls, NoiseCovariance,
};
use thevenin_ident::{PriorSpec, TheveninParams, N_PARAMS, PARAM_NAMES};

fn main() -> thevenin_ident::Result<()> {
    let truth = TheveninParams::nominal();
    let times: Vec<f64> = (0..=2400).map(f64::from).collect();
    let s = sensitivity(&truth, &times, -3.0);

    let full = rank_check(&s)?;
    println!("rank {} of {N_PARAMS}, condition number {:.3e}", full.rank, full.condition_number);
    let sv: Vec<String> = full.singular_values.iter().map(|v| format!("{v:.3e}")).collect();
    println!("singular values: {}", sv.join(" "));
    for (j, name) in PARAM_NAMES.iter().enumerate() {
        println!("  without {name:<7} rank {}", rank_of(&s.without_column(j)).rank);
    }

    let q = NoiseCovariance::Scalar(2.5e-5);
    let prior = PriorSpec::table1();
    let c = theoretical_accuracy_cnls(&s, &q)?;
    let r = theoretical_accuracy_rnls(&s, &q, &truth.theta(), &prior.theta0, &prior.p0_diag)?;
    println!("\n{:<8} {:>12} {:>12}", "param", "cnls nrmse", "rnls nrmse");
    for (i, name) in PARAM_NAMES.iter().enumerate() {
        println!(
            "{name:<8} {:>12.4} {:>12.4}",
            c.per_param_nrmse_theoretical[i], r.per_param_nrmse_theoretical[i]
        );
    }
    println!("\ntrace: cnls {:.4}, rnls {:.4} (bias part {:.2e})", c.total(), r.total(), r.bias_term);
    Ok(())
}
