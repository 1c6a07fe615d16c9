//! Sweeps the penalty strength and reports how evenly reduction targets are
//! spread over the token grid. Writes one heatmap per strength.
//!
//! cargo run --release --example frequency_penalty -- [out_dir]

use std::path::PathBuf;

use dito::commands::calibrate;
use dito::prelude::*;

fn main() -> dito::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "penalty_out".into()));
    std::fs::create_dir_all(&out).map_err(|e| dito::Error::Io { path: out.clone(), source: e })?;
    let cfg = ExperimentConfig::default();
    let schedule = calibrate(&cfg)?.schedule;

    println!("{:>7} {:>6} {:>8} {:>12}", "lambda", "max", "std", "mean error");
    for lambda in [0.0, 0.5, 1.0, 2.0] {
        let run = RunConfig {
            lambda,
            ..cfg.run_config(Variant::Dito)
        };
        let r = run_dito(&run, &schedule)?;
        println!(
            "{lambda:>7.1} {:>6} {:>8.3} {:>12.3}",
            r.history.max(),
            r.history.std_dev(),
            r.mean_recovery_error()
        );
        r.history
            .write_heatmap(&out.join(format!("heatmap_lambda{lambda}.csv")), cfg.model.grid_side())?;
    }
    Ok(())
}
