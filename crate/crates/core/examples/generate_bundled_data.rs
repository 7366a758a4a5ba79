//! Regenerates the synthetic logs and configs shipped in `data/`.
//!
//!     cargo run --example generate_bundled_data

use std::path::PathBuf;

use thevenin_ident::cli::simulate_dataset;
use thevenin_ident::config::{bundled_datasets, Config};
use thevenin_ident::io::save_dataset;

fn main() -> thevenin_ident::Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data");
    for (name, cfg) in bundled_datasets() {
        let ds = simulate_dataset(&cfg)?;
        let path = dir.join(format!("{name}.csv"));
        save_dataset(&path, &ds)?;
        println!("{:<40} {:>6} rows", path.display(), ds.len());
    }

    let mut defaults = Config::default();
    defaults.montecarlo.runs = 100;
    println!("\n# default configuration\n{}", defaults.to_toml()?);
    Ok(())
}
