//! Where the FLOPs go: attention per call at full and reduced token counts,
//! matching overhead, and per-variant totals for one schedule.

use dito::flops::{flops_attention, flops_matching, pair_set_bytes};
use dito::prelude::*;

fn main() -> dito::Result<()> {
    let run = RunConfig::default();
    let (n, d) = (run.model.num_tokens, run.model.hidden_dim);
    let k = run.reduced_tokens()?;
    let partition = bipartition(n, run.partition)?;
    println!("attention, {n} tokens:   {}", flops_attention(n, d));
    println!("attention, {} tokens:   {}", n - k, flops_attention(n - k, d));
    println!(
        "matching ({}x{}):      {}",
        partition.dst.len(),
        partition.src.len(),
        flops_matching(partition.dst.len(), partition.src.len(), d, run.metric)
    );
    println!("pair-set metadata:      {} bytes per block", pair_set_bytes(k));

    let schedule = build_schedule(&MaxIntervals(vec![0, 1, 2, 3, 4, 4, 4, 4, 4, 5, 5, 5, 6, 6, 7, 8, 8, 9, 10, 10, 11, 12, 13, 13]), 24)?;
    for r in [run_dense_result(&run)?, run_dito(&run, &schedule)?, run_input_baseline(&run)?] {
        println!(
            "{:<15} attention {:>11}  matching {:>9}  saving {:>6.2}%  metadata {} B",
            r.variant().as_str(),
            r.flops.total_attention,
            r.flops.total_matching,
            100.0 * (1.0 - r.flops.total() as f64 / r.dense_attention_flops() as f64),
            r.flops.metadata_bytes
        );
    }
    Ok(())
}
