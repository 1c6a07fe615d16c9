//! Calibrate a schedule offline, then compare DiTo with the input-similarity
//! baseline on one held-out latent.
//!
//! cargo run --release --example quickstart

use dito::commands::calibrate;
use dito::prelude::*;

fn main() -> dito::Result<()> {
    let cfg = ExperimentConfig::default();
    let cal = calibrate(&cfg)?;
    println!("delta_max: {:?}", cal.delta_max.0);
    println!(
        "matching steps {:?}, {} reduction steps",
        cal.schedule.match_steps,
        cal.schedule.reduce_steps.len()
    );

    let run = cfg.run_config(Variant::Dito).with_latent_seed(cfg.evaluation.first_seed);
    let dense = run_dense_result(&run)?;
    let dito = run_dito(&run, &cal.schedule)?;
    let baseline = run_input_baseline(&run)?;

    println!("{:<16}{:>14}{:>16}", "variant", "GFLOPs", "mean error");
    for r in [&dense, &dito, &baseline] {
        println!(
            "{:<16}{:>14.3}{:>16.3}",
            r.variant().as_str(),
            r.flops.total() as f64 / 1e9,
            r.mean_recovery_error()
        );
    }
    Ok(())
}
