//! Reduction before the core computation and copy-recovery after it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::TokenMatrix;
use crate::matching::PairSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReduceMode {
    /// Drop reduced sources; kept rows pass through unchanged.
    #[default]
    Prune,
    /// Replace each destination row by the unweighted mean of itself and its sources.
    Merge,
}

/// Where every original token went during reduction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMap {
    /// Surviving token positions in original order; row `i` of the reduced
    /// matrix is token `kept[i]`.
    pub kept: Vec<usize>,
    /// `(src, dst)` for every reduced source: src is restored from dst's output.
    pub restored_from: Vec<(usize, usize)>,
    pub num_tokens: usize,
}

impl IndexMap {
    /// Validates `pairs` against `n` tokens and derives the kept set.
    pub fn from_pairs(pairs: &PairSet, n: usize) -> Result<Self> {
        let mut reduced = vec![false; n];
        for p in &pairs.pairs {
            if p.src >= n || p.dst >= n {
                return Err(Error::internal(format!(
                    "pair ({}, {}) out of range for {n} tokens",
                    p.dst, p.src
                )));
            }
            if std::mem::replace(&mut reduced[p.src], true) {
                return Err(Error::internal(format!("source {} reduced twice", p.src)));
            }
        }
        for p in &pairs.pairs {
            if reduced[p.dst] {
                return Err(Error::internal(format!(
                    "destination {} is itself reduced",
                    p.dst
                )));
            }
        }
        let mut restored_from: Vec<(usize, usize)> = pairs.pairs.iter().map(|p| (p.src, p.dst)).collect();
        restored_from.sort_unstable();
        Ok(IndexMap {
            kept: (0..n).filter(|&i| !reduced[i]).collect(),
            restored_from,
            num_tokens: n,
        })
    }
}

/// Shrinks `x` to `N - k` rows according to `pairs`.
pub fn reduce_tokens(x: &TokenMatrix, pairs: &PairSet, mode: ReduceMode) -> Result<(TokenMatrix, IndexMap)> {
    let map = IndexMap::from_pairs(pairs, x.rows())?;
    let mut reduced = x.select_rows(&map.kept)?;
    if mode == ReduceMode::Merge && !map.restored_from.is_empty() {
        let mut slot = vec![usize::MAX; x.rows()];
        for (i, &p) in map.kept.iter().enumerate() {
            slot[p] = i;
        }
        // Sources grouped per destination, ascending by source position.
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); x.rows()];
        for &(src, dst) in &map.restored_from {
            members[dst].push(src);
        }
        for (dst, srcs) in members.iter().enumerate().filter(|(_, s)| !s.is_empty()) {
            let count = (srcs.len() + 1) as f64;
            let mut acc = x.row(dst).to_vec();
            for &s in srcs {
                for (a, v) in acc.iter_mut().zip(x.row(s)) {
                    *a += v;
                }
            }
            for (out, a) in reduced.row_mut(slot[dst]).iter_mut().zip(acc) {
                *out = a / count;
            }
        }
    }
    Ok((reduced, map))
}

/// Restores `n` rows: kept positions take their reduced-output row, reduced
/// sources copy their destination's row.
pub fn recover_tokens(y_reduced: &TokenMatrix, map: &IndexMap, n: usize) -> Result<TokenMatrix> {
    if y_reduced.rows() != map.kept.len() {
        return Err(Error::internal(format!(
            "{} reduced rows for {} kept tokens",
            y_reduced.rows(),
            map.kept.len()
        )));
    }
    if n != map.num_tokens || map.kept.len() + map.restored_from.len() != n {
        return Err(Error::internal(format!(
            "index map covers {} tokens, asked to restore {n}",
            map.kept.len() + map.restored_from.len()
        )));
    }
    let mut source_row = vec![usize::MAX; n];
    for (i, &p) in map.kept.iter().enumerate() {
        source_row[p] = i;
    }
    for &(src, dst) in &map.restored_from {
        let from = source_row[dst];
        if from == usize::MAX {
            return Err(Error::internal(format!("destination {dst} of source {src} was not kept")));
        }
        source_row[src] = from;
    }
    if let Some(p) = source_row.iter().position(|&r| r == usize::MAX) {
        return Err(Error::internal(format!("token {p} is neither kept nor restored")));
    }
    y_reduced.select_rows(&source_row)
}

/// Squared Frobenius distance `||y - y_tilde||_F^2`.
pub fn recovery_error(y: &TokenMatrix, y_tilde: &TokenMatrix) -> Result<f64> {
    if y.shape() != y_tilde.shape() {
        return Err(Error::shape(format!(
            "recovery_error: {:?} vs {:?}",
            y.shape(),
            y_tilde.shape()
        )));
    }
    Ok(y
        .data()
        .iter()
        .zip(y_tilde.data())
        .fold(0.0, |acc, (a, b)| acc + (a - b) * (a - b)))
}

/// Copy-recovery applied directly to a dense output: kept rows stay exact and
/// every reduced source takes its destination's dense row. The error of this
/// reconstruction isolates how good the matching itself is.
pub fn copy_recover(y: &TokenMatrix, pairs: &PairSet) -> Result<TokenMatrix> {
    let map = IndexMap::from_pairs(pairs, y.rows())?;
    recover_tokens(&y.select_rows(&map.kept)?, &map, y.rows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::matching::Pair;

    fn x4() -> Matrix {
        Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]]).unwrap()
    }

    fn one_pair() -> PairSet {
        PairSet {
            pairs: vec![Pair { dst: 0, src: 2 }],
            ratio: 0.25,
        }
    }

    #[test]
    fn empty_pairs_are_noop() {
        let (r, map) = reduce_tokens(&x4(), &PairSet::empty(0.0), ReduceMode::Prune).unwrap();
        assert_eq!(r, x4());
        assert_eq!(map.kept, vec![0, 1, 2, 3]);
        assert_eq!(recover_tokens(&r, &map, 4).unwrap(), x4());
    }

    #[test]
    fn prune_keeps_rows_in_order() {
        let (r, map) = reduce_tokens(&x4(), &one_pair(), ReduceMode::Prune).unwrap();
        assert_eq!(r, x4().select_rows(&[0, 1, 3]).unwrap());
        assert_eq!(map.restored_from, vec![(2, 0)]);
    }

    #[test]
    fn merge_averages_into_dst() {
        let (r, _) = reduce_tokens(&x4(), &one_pair(), ReduceMode::Merge).unwrap();
        assert_eq!(r.row(0), &[3.0, 4.0]);
        assert_eq!(r.row(1), &[3.0, 4.0]);
        assert_eq!(r.row(2), &[7.0, 8.0]);
    }

    #[test]
    fn recover_copies_dst_row() {
        let (_, map) = reduce_tokens(&x4(), &one_pair(), ReduceMode::Prune).unwrap();
        let y_red = Matrix::from_rows(&[[10.0, 0.0], [11.0, 0.0], [13.0, 0.0]]).unwrap();
        let y = recover_tokens(&y_red, &map, 4).unwrap();
        assert_eq!(y.data(), &[10.0, 0.0, 11.0, 0.0, 10.0, 0.0, 13.0, 0.0]);
    }

    #[test]
    fn duplicate_and_inconsistent_pairs_rejected() {
        let dup = PairSet {
            pairs: vec![Pair { dst: 0, src: 2 }, Pair { dst: 1, src: 2 }],
            ratio: 0.5,
        };
        assert!(matches!(
            reduce_tokens(&x4(), &dup, ReduceMode::Prune),
            Err(Error::Internal(_))
        ));
        let chained = PairSet {
            pairs: vec![Pair { dst: 0, src: 2 }, Pair { dst: 2, src: 3 }],
            ratio: 0.5,
        };
        assert!(reduce_tokens(&x4(), &chained, ReduceMode::Prune).is_err());

        let (_, map) = reduce_tokens(&x4(), &one_pair(), ReduceMode::Prune).unwrap();
        assert!(matches!(
            recover_tokens(&Matrix::zeros(2, 2), &map, 4),
            Err(Error::Internal(_))
        ));
    }

    #[test]
    fn recovery_error_examples() {
        assert_eq!(recovery_error(&x4(), &x4()).unwrap(), 0.0);
        let ones = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert_eq!(recovery_error(&ones, &Matrix::zeros(2, 2)).unwrap(), 4.0);
        let mut shifted = x4();
        shifted.set(3, 1, 11.0);
        assert_eq!(recovery_error(&x4(), &shifted).unwrap(), 9.0);
        assert!(matches!(
            recovery_error(&x4(), &ones),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn copy_recover_keeps_kept_rows() {
        let y = copy_recover(&x4(), &one_pair()).unwrap();
        assert_eq!(y.rows(), 4);
        for p in [0, 1, 3] {
            assert_eq!(y.row(p), x4().row(p));
        }
        assert_eq!(y.row(2), x4().row(0));
        assert_eq!(recovery_error(&x4(), &y).unwrap(), 16.0 + 16.0);
    }
}
