//! Analytic cost model. A multiply-add counts as two FLOPs.

use serde::{Deserialize, Serialize};

use crate::linalg::Metric;

/// Bytes per stored token index in pair-set metadata.
pub const INDEX_BYTES: u64 = 4;

/// Attention FLOPs for `n` tokens of width `d`: the three projections
/// (`6 n d^2`), `Q K^T` (`2 n^2 d`) and `weights * V` (`2 n^2 d`).
/// Softmax is not counted.
pub fn flops_attention(n_tokens: usize, d: usize) -> u64 {
    let (n, d) = (n_tokens as u64, d as u64);
    6 * n * d * d + 2 * n * n * d + 2 * n * n * d
}

/// FLOPs to build one `|D| x |S|` similarity map and take its column argmax.
pub fn flops_matching(n_dst: usize, n_src: usize, d: usize, metric: Metric) -> u64 {
    let (nd, ns, d) = (n_dst as u64, n_src as u64, d as u64);
    let argmax = nd * ns;
    match metric {
        // Row norms, then per entry: dot product, norm product, division.
        Metric::Cosine => 2 * d * (nd + ns) + nd * ns * (2 * d + 2) + argmax,
        // Per entry: subtract, square, accumulate.
        Metric::NegSqDist => nd * ns * 3 * d + argmax,
    }
}

/// Stored size of one pair set of `k` (dst, src) index pairs.
pub fn pair_set_bytes(k: usize) -> u64 {
    k as u64 * 2 * INDEX_BYTES
}

/// Per-`(t, b)` cost ledger of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    /// Attention FLOPs, indexed `[t][b]`.
    pub attention: Vec<Vec<u64>>,
    /// Matching-stage FLOPs (similarity maps), indexed `[t][b]`.
    pub matching: Vec<Vec<u64>>,
    pub total_attention: u64,
    pub total_matching: u64,
    /// Peak bytes of pair-set metadata held between steps.
    pub metadata_bytes: u64,
}

impl FlopsReport {
    pub fn new(num_steps: usize, num_blocks: usize) -> Self {
        FlopsReport {
            attention: vec![vec![0; num_blocks]; num_steps],
            matching: vec![vec![0; num_blocks]; num_steps],
            ..Default::default()
        }
    }

    pub fn record_attention(&mut self, t: usize, b: usize, flops: u64) {
        self.attention[t][b] += flops;
        self.total_attention += flops;
    }

    pub fn record_matching(&mut self, t: usize, b: usize, flops: u64) {
        self.matching[t][b] += flops;
        self.total_matching += flops;
    }

    pub fn total(&self) -> u64 {
        self.total_attention + self.total_matching
    }
}
