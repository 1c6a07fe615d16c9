//! Reduce tokens before attention and copy outputs back afterwards, in both
//! prune and merge modes, and measure what the copy costs.

use dito::matching::Pair;
use dito::model::{attention_block, init_model, initial_latent};
use dito::prelude::*;
use dito::reduce::{copy_recover, recover_tokens, recovery_error, reduce_tokens};

fn main() -> dito::Result<()> {
    let cfg = ModelConfig {
        num_tokens: 16,
        hidden_dim: 8,
        num_blocks: 1,
        ..ModelConfig::default()
    };
    let block = &init_model(&cfg)?.blocks[0];
    let x = initial_latent(&cfg)?;
    let y = attention_block(&x, block)?;

    let partition = bipartition(16, PartitionStrategy::default())?;
    let pairs = golden_match(&y, &partition, 0.25, Metric::NegSqDist)?;
    let floor = recovery_error(&y, &copy_recover(&y, &pairs)?)?;
    println!("copy-recovery error of the dense output: {floor:.4}");

    for mode in [ReduceMode::Prune, ReduceMode::Merge] {
        let (xr, map) = reduce_tokens(&x, &pairs, mode)?;
        let y_tilde = recover_tokens(&attention_block(&xr, block)?, &map, x.rows())?;
        println!(
            "{mode:?}: attention on {} of {} tokens, error {:.4}",
            xr.rows(),
            x.rows(),
            recovery_error(&y, &y_tilde)?
        );
    }

    let manual = PairSet {
        pairs: vec![Pair { dst: 0, src: 1 }],
        ratio: 1.0 / 16.0,
    };
    println!("index metadata for one pair: {:?}", manual.to_index_bytes());
    Ok(())
}
