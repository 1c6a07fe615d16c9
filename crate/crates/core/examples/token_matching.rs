//! Bipartite matching on a 4x4 token grid: which sources get folded into
//! which destinations, with and without a selection-frequency penalty.

use dito::matching::{match_candidates, partition_similarity, select_top_k};
use dito::penalty::apply_penalty;
use dito::prelude::*;

fn main() -> dito::Result<()> {
    let n = 16;
    let partition = bipartition(n, PartitionStrategy::Strided { stride: 2 })?;
    println!("dst {:?}\nsrc {:?}", partition.dst, partition.src);

    // Tokens on a smooth ramp, so neighbours are near-duplicates.
    let rows: Vec<[f64; 2]> = (0..n).map(|i| [(i % 4) as f64, (i / 4) as f64 + 1.0]).collect();
    let feats = Matrix::from_rows(&rows)?;

    let pairs = golden_match(&feats, &partition, 0.25, Metric::Cosine)?;
    for p in &pairs.pairs {
        println!("src {:>2} -> dst {:>2}", p.src, p.dst);
    }

    // Pretend the first two picks were already reduced many times.
    let mut history = SelectionHistory::new(n);
    for p in pairs.pairs.iter().take(2) {
        history.counts[p.src] = 10;
    }
    let map = partition_similarity(&feats, &partition, Metric::Cosine)?;
    let candidates = match_candidates(&map, &partition)?;
    let penalised = apply_penalty(&candidates, &history, 1.0, 0.25)?;
    let spread = select_top_k(&penalised, 0.25, n);
    println!("with penalty: {:?}", spread.src_positions().collect::<Vec<_>>());
    Ok(())
}
