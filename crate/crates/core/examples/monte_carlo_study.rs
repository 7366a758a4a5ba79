//! Repeated noisy discharges identified by all three estimators.
//!
//! Prints per-parameter NRMSE next to the predicted value and the mean
//! wall time per method.
//!
//!     cargo run --release --example monte_carlo_study -- 100

use thevenin_ident::montecarlo::{run_study, McConfig};
use thevenin_ident::{Method, PARAM_NAMES};

fn main() -> thevenin_ident::Result<()> {
    let runs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let cfg = McConfig {
        runs,
        seed: 2024,
        ..McConfig::default()
    };
    let report = run_study(&cfg)?;

    print!("{:<10}", "param");
    for m in &report.methods {
        print!("{:>12}", m.method.name());
    }
    println!("{:>12}{:>12}", "theory_c", "theory_r");
    for (i, name) in PARAM_NAMES.iter().enumerate() {
        print!("{name:<10}");
        for m in &report.methods {
            print!("{:>12.4}", m.nrmse[i]);
        }
        let tc = report.theoretical_cnls.map_or(f64::NAN, |t| t[i]);
        let tr = report.theoretical_rnls.map_or(f64::NAN, |t| t[i]);
        println!("{tc:>12.4}{tr:>12.4}");
    }
    println!();
    for m in &report.methods {
        println!(
            "{:<10} failed {:>3}  mean {:>8.2} ms  {:>6.1} iterations",
            m.method.name(),
            m.failed,
            m.mean_wall_time_ms(),
            m.mean_iterations()
        );
    }
    if let (Some(c), Some(r)) = (report.method(Method::Cnls), report.method(Method::Rnls)) {
        let worst = c.nrmse.iter().chain(&r.nrmse).cloned().fold(0.0, f64::max);
        println!("\nworst constrained/ridge NRMSE: {worst:.4}");
    }
    Ok(())
}
