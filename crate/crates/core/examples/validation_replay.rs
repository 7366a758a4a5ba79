//! Validates a model identified on the training log against the bundled
//! drive-cycle and pulse-and-rest logs.
//!
//!     cargo run --example validation_replay

use std::path::PathBuf;

use thevenin_ident::io::load_dataset;
use thevenin_ident::workflow::{
    extract_rest_points, identify, validate_lumped_resistance, validate_soc_ocv, validate_voltage, DatasetMeta,
    DEFAULT_NOISE_VARIANCE,
};
use thevenin_ident::{Method, PriorSpec, TrustRegionConfig};

fn main() -> thevenin_ident::Result<()> {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data");
    let load = |name: &str| load_dataset(&data.join(name), DEFAULT_NOISE_VARIANCE, DatasetMeta::default());

    let training = load("training_cc.csv")?;
    let drive = load("udds.csv")?;
    let pulses = load("intermittent.csv")?;
    let points = extract_rest_points(&pulses, 3600.0, 1.0);

    for method in Method::ALL {
        let id = identify(&training, &PriorSpec::table1(), method, &TrustRegionConfig::default())?;
        let v = validate_voltage(&id.params, &drive)?;
        let ocv = validate_soc_ocv(&id.params, &points.ocv);
        let res = validate_lumped_resistance(&id.params, &points.recovery);
        println!(
            "{:<10} drive cycle rms {:>6.2} mV, max {:>7.2} mV, {:>5.1}% under 20 mV | OCV rms {:>6.2} mV | R0+R rms {:>6.2} mOhm",
            method.name(),
            v.rms_error * 1e3,
            v.max_abs_error * 1e3,
            100.0 * v.fraction_within(0.020),
            ocv.rms_error * 1e3,
            res.rms_error * 1e3,
        );
    }
    Ok(())
}
