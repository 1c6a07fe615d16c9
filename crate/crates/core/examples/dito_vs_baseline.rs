//! Per-seed error and cost of DiTo against input-similarity matching at the
//! same reduction ratio, over the held-out evaluation seeds.

use dito::commands::calibrate;
use dito::prelude::*;
use rayon::prelude::*;

fn main() -> dito::Result<()> {
    let cfg = ExperimentConfig::default();
    let schedule = calibrate(&cfg)?.schedule;
    let base_cfg = cfg.run_config(Variant::Dito);

    let rows = cfg
        .evaluation
        .seeds()
        .into_par_iter()
        .map(|seed| {
            let run = base_cfg.with_latent_seed(seed);
            Ok((seed, run_dito(&run, &schedule)?, run_input_baseline(&run)?))
        })
        .collect::<dito::Result<Vec<_>>>()?;

    println!("{:>5} {:>12} {:>12} {:>6}", "seed", "dito", "baseline", "win");
    let mut wins = 0;
    for (seed, d, b) in &rows {
        let win = d.mean_recovery_error() <= b.mean_recovery_error() && d.flops.total() <= b.flops.total();
        wins += win as usize;
        println!(
            "{seed:>5} {:>12.2} {:>12.2} {:>6}",
            d.mean_recovery_error(),
            b.mean_recovery_error(),
            if win { "yes" } else { "no" }
        );
    }
    let (_, d, b) = &rows[0];
    println!(
        "DiTo ahead on {wins}/{} seeds; FLOPs {} vs {}",
        rows.len(),
        d.flops.total(),
        b.flops.total()
    );
    Ok(())
}
