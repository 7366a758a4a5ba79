//! Identifies the bundled training log with the three estimators and
//! prints one row per method.
//!
//!     cargo run --example identify_cnls_rnls

use std::path::PathBuf;

use thevenin_ident::io::load_dataset;
use thevenin_ident::workflow::{identify, DatasetMeta, DEFAULT_NOISE_VARIANCE};
use thevenin_ident::{Method, PriorSpec, TrustRegionConfig, PARAM_NAMES};

fn main() -> thevenin_ident::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/training_cc.csv");
    let dataset = load_dataset(&path, DEFAULT_NOISE_VARIANCE, DatasetMeta::default())?;
    let prior = PriorSpec::table1();
    let cfg = TrustRegionConfig::default();

    print!("{:<10}", "method");
    for name in PARAM_NAMES {
        print!("{name:>9}");
    }
    println!("{:>10}{:>7}", "C [F]", "iters");
    for method in Method::ALL {
        let id = identify(&dataset, &prior, method, &cfg)?;
        print!("{:<10}", method.name());
        for v in id.params.theta() {
            print!("{:>9.3}", v);
        }
        println!("{:>10.0}{:>7}", id.derived.capacitance_f, id.report.iterations);
    }
    Ok(())
}
