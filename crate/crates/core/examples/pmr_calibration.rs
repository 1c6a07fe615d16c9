//! How well does an older output predict the current golden matching?
//! Prints block-averaged PMR by reuse interval and the resulting maximum
//! intervals at a few thresholds.

use dito::model::{init_model, run_dense_with};
use dito::prelude::*;

fn main() -> dito::Result<()> {
    let cfg = ExperimentConfig::default();
    let params = init_model(&cfg.model)?;
    let corpus = cfg
        .calibration
        .seeds
        .iter()
        .map(|&s| run_dense_with(&cfg.model.with_latent_seed(s), &params))
        .collect::<dito::Result<Vec<_>>>()?;
    let partition = bipartition(cfg.model.num_tokens, cfg.tr.partition)?;
    let table = build_pmr_table(&corpus, &partition, cfg.tr.top_k, cfg.tr.metric, 6)?;

    println!("  t  input   d=1   d=2   d=3   d=4   d=5   d=6");
    for t in 0..table.num_steps() {
        let cells: Vec<String> = (0..=6)
            .map(|d| table.block_avg(t, d).map_or("    -".into(), |v| format!("{v:5.3}")))
            .collect();
        println!("{t:>3}  {}", cells.join(" "));
    }
    for tau in [0.8, 0.9, 0.95] {
        println!("tau {tau}: {:?}", max_intervals(&table, tau)?.0);
    }
    Ok(())
}
