//! Constant-current discharge of the nominal cell: closed-form response
//! against the zero-order-hold simulator, and the time to cut-off.
//!
//!     cargo run --example simulate_discharge

use thevenin_ident::model::simulate;
use thevenin_ident::{CurrentProfile, TheveninParams};

fn main() -> thevenin_ident::Result<()> {
    let params = TheveninParams::nominal();
    let current = -3.0;
    let sim = simulate(&params, &CurrentProfile::constant(current), 1.0, 2400.0)?;

    println!("{:>6} {:>8} {:>10} {:>10} {:>10}", "t_s", "soc", "v_zoh", "v_closed", "diff");
    for s in sim.samples.iter().step_by(300) {
        let closed = params.voltage_constant_current(current, s.t);
        println!(
            "{:>6.0} {:>8.4} {:>10.5} {:>10.5} {:>10.1e}",
            s.t,
            s.soc,
            s.voltage,
            closed,
            s.voltage - closed
        );
    }

    let cutoff = 3.2;
    match sim.samples.iter().find(|s| s.voltage < cutoff) {
        Some(s) => println!("\nvoltage drops below {cutoff} V at t = {:.0} s (SoC {:.3})", s.t, s.soc),
        None => println!("\nvoltage stays above {cutoff} V for the whole run"),
    }
    println!("capacitance C = 1/(R * rc_inv) = {:.0} F", params.capacitance());
    Ok(())
}
