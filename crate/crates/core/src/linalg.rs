//! Dense row-major `f64` matrices and the handful of kernels the pipeline needs.
//!
//! Every reduction accumulates strictly left to right so results are
//! reproducible bit for bit across runs and platforms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix. One row per token when used as a token matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::new(raw.rows, raw.cols, raw.data)
    }
}

/// An `N x d` matrix of token features.
pub type TokenMatrix = Matrix;

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        let m = Matrix { rows, cols, data };
        m.check_finite("Matrix::new")?;
        Ok(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    /// Wraps `data` without the finiteness scan; for kernels whose output is
    /// checked by the caller.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Gathers the given rows, in the given order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::shape(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Matrix::from_raw(indices.len(), self.cols, data))
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        Matrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }

    /// `(1 - alpha) * self + alpha * other`, computed per entry in that form.
    pub fn lerp(&self, other: &Matrix, alpha: f64) -> Result<Matrix> {
        let keep = 1.0 - alpha;
        self.zip_with(other, "lerp", |a, b| keep * a + alpha * b)
    }

    /// Squared Frobenius norm.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc + v * v)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    fn zip_with(&self, other: &Matrix, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        let out = Matrix::from_raw(self.rows, self.cols, data);
        out.check_finite(op)?;
        Ok(out)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let diff = x - y;
        acc += diff * diff;
    }
    acc
}

/// Standard matrix product `a * b`.
///
/// Each output element is accumulated over the shared dimension in index
/// order, so the result equals a naive triple loop bit for bit.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(format!(
            "matmul: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    // Walking rows of b^T keeps the inner loop contiguous without changing
    // the accumulation order.
    matmul_transposed(a, &b.transpose())
}

/// `a * b^T`, i.e. every row of `a` dotted with every row of `b`.
pub fn matmul_transposed(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::shape(format!(
            "matmul_transposed: {:?} x {:?}^T",
            a.shape(),
            b.shape()
        )));
    }
    let mut data = Vec::with_capacity(a.rows * b.rows);
    for ra in a.row_iter() {
        for rb in b.row_iter() {
            data.push(dot(ra, rb));
        }
    }
    let out = Matrix::from_raw(a.rows, b.rows, data);
    out.check_finite("matmul")?;
    Ok(out)
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    if m.is_empty() {
        return Err(Error::shape("softmax_rows: empty matrix"));
    }
    let mut out = m.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out.check_finite("softmax_rows")?;
    Ok(out)
}

/// Cosine similarity of every `dst` row against every `src` row, shaped
/// `|D| x |S|`. A zero-norm row has similarity 0 against everything.
pub fn cosine_similarity_map(dst_feats: &Matrix, src_feats: &Matrix) -> Result<Matrix> {
    check_map_operands(dst_feats, src_feats)?;
    let norm = |r: &[f64]| dot(r, r).sqrt();
    let src_norms: Vec<f64> = src_feats.row_iter().map(norm).collect();
    let mut data = Vec::with_capacity(dst_feats.rows * src_feats.rows);
    for rd in dst_feats.row_iter() {
        let nd = norm(rd);
        for (rs, &ns) in src_feats.row_iter().zip(&src_norms) {
            let denom = nd * ns;
            data.push(if denom > 0.0 { dot(rd, rs) / denom } else { 0.0 });
        }
    }
    let out = Matrix::from_raw(dst_feats.rows, src_feats.rows, data);
    out.check_finite("cosine_similarity_map")?;
    Ok(out)
}

/// Negative squared Euclidean distance of every `dst` row against every `src`
/// row, shaped `|D| x |S|`. Larger is more similar.
pub fn neg_sq_dist_map(dst_feats: &Matrix, src_feats: &Matrix) -> Result<Matrix> {
    check_map_operands(dst_feats, src_feats)?;
    let mut data = Vec::with_capacity(dst_feats.rows * src_feats.rows);
    for rd in dst_feats.row_iter() {
        for rs in src_feats.row_iter() {
            data.push(-sq_dist(rd, rs));
        }
    }
    let out = Matrix::from_raw(dst_feats.rows, src_feats.rows, data);
    out.check_finite("neg_sq_dist_map")?;
    Ok(out)
}

fn check_map_operands(dst: &Matrix, src: &Matrix) -> Result<()> {
    if dst.cols != src.cols {
        return Err(Error::shape(format!(
            "similarity map: feature dims {} vs {}",
            dst.cols, src.cols
        )));
    }
    if dst.rows == 0 || src.rows == 0 {
        return Err(Error::shape("similarity map: need at least one row each"));
    }
    Ok(())
}

/// Token similarity measure used for matching.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Cosine,
    /// `-||a - b||^2`; makes best-match selection minimise copy error exactly.
    NegSqDist,
}

impl Metric {
    pub fn similarity_map(self, dst_feats: &Matrix, src_feats: &Matrix) -> Result<Matrix> {
        match self {
            Metric::Cosine => cosine_similarity_map(dst_feats, src_feats),
            Metric::NegSqDist => neg_sq_dist_map(dst_feats, src_feats),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::NegSqDist => "neg_sq_dist",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_times_m() {
        let a = m(&[&[1.5, -2.0], &[0.25, 7.0]]);
        assert_eq!(matmul(&Matrix::identity(2), &a).unwrap(), a);
    }

    #[test]
    fn row_times_column() {
        let out = matmul(&m(&[&[1.0, 2.0]]), &m(&[&[3.0], &[4.0]])).unwrap();
        assert_eq!(out.data(), &[11.0]);
    }

    #[test]
    fn zero_annihilates() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let out = matmul(&Matrix::zeros(2, 2), &a).unwrap();
        assert_eq!(out, Matrix::zeros(2, 2));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn new_rejects_bad_length_and_nan() {
        assert!(matches!(
            Matrix::new(2, 2, vec![0.0; 3]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            Matrix::new(1, 2, vec![0.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        let out = softmax_rows(&m(&[&[0.0, 0.0]])).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5]);

        for c in [-3.0, 0.0, 12.5, 700.0] {
            let out = softmax_rows(&m(&[&[c, c, c]])).unwrap();
            for &v in out.data() {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_large_logit_does_not_overflow() {
        // exp(-1000) underflows to exactly 0 in f64 and 1/(1+e^-1000) rounds to 1.
        let out = softmax_rows(&m(&[&[1000.0, 0.0]])).unwrap();
        assert_eq!(out.data(), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_empty_is_error() {
        assert!(matches!(
            softmax_rows(&Matrix::zeros(0, 3)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn cosine_examples() {
        let out = cosine_similarity_map(&m(&[&[1.0, 0.0]]), &m(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(out.data(), &[1.0, 0.0]);

        let out = cosine_similarity_map(&m(&[&[2.0, 0.0]]), &m(&[&[1.0, 0.0]])).unwrap();
        assert_eq!(out.data(), &[1.0]);

        let out = cosine_similarity_map(&m(&[&[1.0, 1.0]]), &m(&[&[1.0, 0.0]])).unwrap();
        assert!((out.get(0, 0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
    }

    #[test]
    fn cosine_zero_row_is_zero() {
        let out = cosine_similarity_map(&m(&[&[0.0, 0.0]]), &m(&[&[1.0, 0.0], &[0.0, 0.0]])).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn cosine_dim_mismatch() {
        let err = cosine_similarity_map(&Matrix::zeros(1, 2), &Matrix::zeros(1, 3)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn neg_sq_dist_example() {
        let out = neg_sq_dist_map(&m(&[&[0.0, 0.0]]), &m(&[&[3.0, 4.0]])).unwrap();
        assert_eq!(out.data(), &[-25.0]);
    }

    fn matrix_strategy(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
        (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
            proptest::collection::vec(-50.0f64..50.0, r * c)
                .prop_map(move |data| Matrix::new(r, c, data).unwrap())
        })
    }

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for p in 0..a.cols() {
                    acc += a.get(i, p) * b.get(p, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn softmax_rows_sum_to_one(x in matrix_strategy(6, 9)) {
            let s = softmax_rows(&x).unwrap();
            for r in s.row_iter() {
                let sum: f64 = r.iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn cosine_in_unit_interval(
            (a, b) in (1usize..6, 1usize..6, 1usize..8).prop_flat_map(|(r1, r2, c)| (
                proptest::collection::vec(-50.0f64..50.0, r1 * c)
                    .prop_map(move |d| Matrix::new(r1, c, d).unwrap()),
                proptest::collection::vec(-50.0f64..50.0, r2 * c)
                    .prop_map(move |d| Matrix::new(r2, c, d).unwrap()),
            ))
        ) {
            let sims = cosine_similarity_map(&a, &b).unwrap();
            prop_assert_eq!(sims.shape(), (a.rows(), b.rows()));
            for &v in sims.data() {
                prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&v));
            }
        }

        #[test]
        fn matmul_matches_triple_loop(
            (a, b) in (1usize..6, 1usize..6, 1usize..6).prop_flat_map(|(r, k, c)| (
                proptest::collection::vec(-10.0f64..10.0, r * k)
                    .prop_map(move |d| Matrix::new(r, k, d).unwrap()),
                proptest::collection::vec(-10.0f64..10.0, k * c)
                    .prop_map(move |d| Matrix::new(k, c, d).unwrap()),
            ))
        ) {
            let fast = matmul(&a, &b).unwrap();
            let slow = naive_matmul(&a, &b);
            prop_assert_eq!(fast.data(), slow.data());
        }
    }
}
