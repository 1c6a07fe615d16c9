//! Token matching: bipartition, per-source best destination, top-k pair selection.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Metric, TokenMatrix};
use crate::model::grid_side;

/// How token positions are split into destination and source sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionStrategy {
    /// Grid cell `(i, j)` is a destination iff both coordinates are multiples of `stride`.
    Strided { stride: usize },
    /// `n / stride^2` destinations sampled uniformly without replacement.
    Random { stride: usize, seed: u64 },
}

impl Default for PartitionStrategy {
    fn default() -> Self {
        PartitionStrategy::Strided { stride: 2 }
    }
}

/// Disjoint destination / source token positions, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub dst: Vec<usize>,
    pub src: Vec<usize>,
}

impl Partition {
    /// Builds a partition from explicit index lists, checking that they cover
    /// `0..n` exactly once.
    pub fn new(n: usize, mut dst: Vec<usize>, mut src: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; n];
        for &i in dst.iter().chain(&src) {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::config(format!(
                    "partition index {i} is out of range or repeated"
                )));
            }
        }
        if dst.len() + src.len() != n {
            return Err(Error::config("partition does not cover every token"));
        }
        dst.sort_unstable();
        src.sort_unstable();
        Ok(Partition { dst, src })
    }

    pub fn num_tokens(&self) -> usize {
        self.dst.len() + self.src.len()
    }
}

pub fn bipartition(n: usize, strategy: PartitionStrategy) -> Result<Partition> {
    if n < 4 {
        return Err(Error::config(format!("bipartition needs n >= 4, got {n}")));
    }
    match strategy {
        PartitionStrategy::Strided { stride } => {
            let side = grid_side(n)
                .ok_or_else(|| Error::config(format!("{n} tokens do not form a square grid")))?;
            if stride == 0 || side % stride != 0 {
                return Err(Error::config(format!(
                    "stride {stride} does not divide grid side {side}"
                )));
            }
            let (dst, src) = (0..n).partition(|&p| (p / side) % stride == 0 && (p % side) % stride == 0);
            Ok(Partition { dst, src })
        }
        PartitionStrategy::Random { stride, seed } => {
            if stride == 0 || n / (stride * stride) == 0 {
                return Err(Error::config(format!(
                    "stride {stride} leaves no destinations for {n} tokens"
                )));
            }
            let n_dst = n / (stride * stride);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut is_dst = vec![false; n];
            for p in rand::seq::index::sample(&mut rng, n, n_dst) {
                is_dst[p] = true;
            }
            let (dst, src) = (0..n).partition(|&p| is_dst[p]);
            Ok(Partition { dst, src })
        }
    }
}

/// Similarity of every destination row against every source row of `feats`.
pub fn partition_similarity(feats: &TokenMatrix, partition: &Partition, metric: Metric) -> Result<Matrix> {
    if feats.rows() != partition.num_tokens() {
        return Err(Error::shape(format!(
            "{} feature rows for a partition of {} tokens",
            feats.rows(),
            partition.num_tokens()
        )));
    }
    let dst = feats.select_rows(&partition.dst)?;
    let src = feats.select_rows(&partition.src)?;
    metric.similarity_map(&dst, &src)
}

/// Best destination and its score for each source, in partition source order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidates {
    pub src: Vec<usize>,
    pub best_dst: Vec<usize>,
    pub scores: Vec<f64>,
}

impl Candidates {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Column-wise argmax of a `|D| x |S|` map. Ties go to the smallest dst position.
pub fn match_candidates(map: &Matrix, partition: &Partition) -> Result<Candidates> {
    if partition.dst.is_empty() || partition.src.is_empty() {
        return Err(Error::config("matching needs non-empty dst and src sets"));
    }
    if map.shape() != (partition.dst.len(), partition.src.len()) {
        return Err(Error::shape(format!(
            "similarity map {:?} vs partition ({}, {})",
            map.shape(),
            partition.dst.len(),
            partition.src.len()
        )));
    }
    let mut best_dst = Vec::with_capacity(partition.src.len());
    let mut scores = Vec::with_capacity(partition.src.len());
    for j in 0..partition.src.len() {
        let mut best = (partition.dst[0], map.get(0, j));
        for (i, &d) in partition.dst.iter().enumerate().skip(1) {
            let v = map.get(i, j);
            if v > best.1 || (v == best.1 && d < best.0) {
                best = (d, v);
            }
        }
        best_dst.push(best.0);
        scores.push(best.1);
    }
    Ok(Candidates {
        src: partition.src.clone(),
        best_dst,
        scores,
    })
}

/// One matched `(dst, src)` correspondence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub dst: usize,
    pub src: usize,
}

/// Final matched pairs, ordered by score descending then src position ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
    pub ratio: f64,
}

impl PairSet {
    pub fn empty(ratio: f64) -> Self {
        PairSet {
            pairs: Vec::new(),
            ratio,
        }
    }

    pub fn k(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn src_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().map(|p| p.src)
    }

    /// Compact little-endian `u32` index record: `dst0 src0 dst1 src1 ...`.
    pub fn to_index_bytes(&self) -> Vec<u8> {
        self.pairs
            .iter()
            .flat_map(|p| [p.dst as u32, p.src as u32])
            .flat_map(u32::to_le_bytes)
            .collect()
    }
}

/// Number of tokens removed at ratio `r` out of `n`, before clamping to `|S|`.
pub fn reduction_count(ratio: f64, n: usize) -> usize {
    (ratio * n as f64).floor() as usize
}

/// Keeps the `min(floor(r * n), |S|)` sources with the largest scores.
pub fn select_top_k(candidates: &Candidates, ratio: f64, n: usize) -> PairSet {
    let k = reduction_count(ratio, n).min(candidates.len());
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates.scores[b]
            .total_cmp(&candidates.scores[a])
            .then(candidates.src[a].cmp(&candidates.src[b]))
    });
    let pairs = order[..k]
        .iter()
        .map(|&i| Pair {
            dst: candidates.best_dst[i],
            src: candidates.src[i],
        })
        .collect();
    PairSet { pairs, ratio }
}

/// Matching on arbitrary features: similarity map, column argmax, top-k.
pub fn match_features(feats: &TokenMatrix, partition: &Partition, ratio: f64, metric: Metric) -> Result<PairSet> {
    if partition.src.is_empty() {
        return Ok(PairSet::empty(ratio));
    }
    let map = partition_similarity(feats, partition, metric)?;
    let candidates = match_candidates(&map, partition)?;
    Ok(select_top_k(&candidates, ratio, feats.rows()))
}

/// The ground-truth matching computed from a block's own dense output.
pub fn golden_match(y: &TokenMatrix, partition: &Partition, ratio: f64, metric: Metric) -> Result<PairSet> {
    match_features(y, partition, ratio, metric)
}

/// Orders two scores best-first, for callers ranking destinations.
pub(crate) fn rank_desc(a: (f64, usize), b: (f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strided_4x4() {
        let p = bipartition(16, PartitionStrategy::Strided { stride: 2 }).unwrap();
        assert_eq!(p.dst, vec![0, 2, 8, 10]);
        assert_eq!(p.src.len(), 12);
        let p = bipartition(16, PartitionStrategy::Strided { stride: 4 }).unwrap();
        assert_eq!(p.dst, vec![0]);
    }

    #[test]
    fn bipartition_errors() {
        for (n, s) in [(15, 1), (16, 3), (16, 0), (2, 1)] {
            assert!(matches!(
                bipartition(n, PartitionStrategy::Strided { stride: s }),
                Err(Error::Config(_))
            ));
        }
        assert!(bipartition(16, PartitionStrategy::Random { stride: 5, seed: 0 }).is_err());
    }

    #[test]
    fn random_partition_size_and_determinism() {
        let s = PartitionStrategy::Random { stride: 2, seed: 9 };
        let a = bipartition(64, s).unwrap();
        assert_eq!(a.dst.len(), 16);
        assert_eq!(a, bipartition(64, s).unwrap());
        assert_ne!(a, bipartition(64, PartitionStrategy::Random { stride: 2, seed: 10 }).unwrap());
    }

    fn two_by_two() -> Partition {
        Partition::new(4, vec![0, 1], vec![2, 3]).unwrap()
    }

    #[test]
    fn column_argmax() {
        let a = Matrix::from_rows(&[[0.9, 0.2], [0.1, 0.8]]).unwrap();
        let c = match_candidates(&a, &two_by_two()).unwrap();
        assert_eq!(c.best_dst, vec![0, 1]);
        assert_eq!(c.scores, vec![0.9, 0.8]);
    }

    #[test]
    fn ties_go_to_smallest_dst() {
        let a = Matrix::from_rows(&[[0.5, 0.3], [0.5, 0.3]]).unwrap();
        let c = match_candidates(&a, &two_by_two()).unwrap();
        assert_eq!(c.best_dst, vec![0, 0]);
    }

    #[test]
    fn single_dst_takes_everything() {
        let p = Partition::new(4, vec![2], vec![0, 1, 3]).unwrap();
        let a = Matrix::from_rows(&[[-1.0, 0.0, 7.0]]).unwrap();
        assert_eq!(match_candidates(&a, &p).unwrap().best_dst, vec![2, 2, 2]);
    }

    #[test]
    fn empty_sets_are_config_errors() {
        let p = Partition { dst: vec![], src: vec![0] };
        assert!(matches!(
            match_candidates(&Matrix::zeros(0, 1), &p),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn no_sources_means_no_pairs() {
        let p = bipartition(4, PartitionStrategy::Random { stride: 1, seed: 0 }).unwrap();
        assert!(p.src.is_empty());
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 0.0]]).unwrap();
        assert!(match_features(&x, &p, 1.0, Metric::Cosine).unwrap().is_empty());
    }

    fn cands(scores: &[f64]) -> Candidates {
        Candidates {
            src: (10..10 + scores.len()).collect(),
            best_dst: vec![0; scores.len()],
            scores: scores.to_vec(),
        }
    }

    #[test]
    fn top_k_examples() {
        let c = cands(&[0.9, 0.3, 0.7]);
        assert!(select_top_k(&c, 0.0, 12).is_empty());
        let p = select_top_k(&c, 2.0 / 12.0, 12);
        assert_eq!(p.src_positions().collect::<Vec<_>>(), vec![10, 12]);
        // floor(1.0 * 12) = 12 > |S| = 3
        assert_eq!(select_top_k(&c, 1.0, 12).k(), 3);
    }

    #[test]
    fn top_k_ties_by_src_position() {
        let c = cands(&[0.5, 0.5, 0.5]);
        let p = select_top_k(&c, 0.5, 4);
        assert_eq!(p.src_positions().collect::<Vec<_>>(), vec![10, 11]);
    }

    #[test]
    fn golden_identical_rows_rank_first() {
        let y = Matrix::from_rows(&[
            [1.0, 0.0],
            [0.0, 1.0],
            [0.3, 0.5],
            [0.0, 1.0], // copy of dst 1
        ])
        .unwrap();
        let p = golden_match(&y, &two_by_two(), 0.25, Metric::Cosine).unwrap();
        assert_eq!(p.pairs, vec![Pair { dst: 1, src: 3 }]);
    }

    #[test]
    fn golden_scale_invariant_under_cosine() {
        let y = Matrix::from_rows(&[[1.0, 0.2], [0.1, 1.0], [0.7, 0.5], [0.2, 0.9]]).unwrap();
        let a = golden_match(&y, &two_by_two(), 0.5, Metric::Cosine).unwrap();
        let b = golden_match(&y.scale(2.0), &two_by_two(), 0.5, Metric::Cosine).unwrap();
        assert_eq!(a.pairs, b.pairs);
    }

    #[test]
    fn index_bytes_are_compact() {
        let p = PairSet {
            pairs: vec![Pair { dst: 1, src: 258 }],
            ratio: 0.1,
        };
        assert_eq!(p.to_index_bytes(), vec![1, 0, 0, 0, 2, 1, 0, 0]);
    }

    fn map_strategy() -> impl Strategy<Value = (Matrix, Partition)> {
        (1usize..6, 1usize..6).prop_flat_map(|(nd, ns)| {
            proptest::collection::vec(-3i32..4, nd * ns).prop_map(move |v| {
                // Small integer grid so ties are common.
                let m = Matrix::new(nd, ns, v.into_iter().map(f64::from).collect()).unwrap();
                let p = Partition::new(nd + ns, (0..nd).collect(), (nd..nd + ns).collect()).unwrap();
                (m, p)
            })
        })
    }

    proptest! {
        #[test]
        fn selection_is_self_consistent((map, part) in map_strategy(), r in 0.0f64..1.0) {
            let n = part.num_tokens();
            let c = match_candidates(&map, &part).unwrap();
            let ps = select_top_k(&c, r, n);
            // Rebuild scores from the map and re-rank from scratch.
            let mut ranked: Vec<(f64, usize, usize)> = part.src.iter().enumerate().map(|(j, &s)| {
                let (i, best) = (0..part.dst.len())
                    .map(|i| (i, map.get(i, j)))
                    .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
                (best, s, part.dst[i])
            }).collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let expected: Vec<Pair> = ranked.iter().take(ps.k())
                .map(|&(_, s, d)| Pair { dst: d, src: s }).collect();
            prop_assert_eq!(ps.pairs, expected);
        }

        #[test]
        fn permutation_covariant((map, part) in map_strategy(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let nd = part.dst.len();
            let mut perm: Vec<usize> = (0..nd).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            // Row i of the permuted map is row perm[i] of the original, and the
            // permuted partition lists dst positions in the same shuffled order.
            let permuted = map.select_rows(&perm).unwrap();
            let relabeled = Partition {
                dst: perm.iter().map(|&i| part.dst[i]).collect(),
                src: part.src.clone(),
            };
            let a = match_candidates(&map, &part).unwrap();
            let b = match_candidates(&permuted, &relabeled).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
