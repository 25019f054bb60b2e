//! Dense row-major `f64` matrices and the small set of numeric primitives
//! the rest of the crate is built from.
//!
//! Everything here is deliberately simple: matrices are `Vec<f64>` with a
//! shape, and the routines are plain loops. The two places that need care
//! are masked softmax (max-subtraction for stability, explicit error on an
//! empty support) and cosine similarity (guarded denominator, output
//! clamped to `[-1, 1]`).

use crate::error::{KgatError, Result};

/// Lower bound applied to the product of row norms in [`cosine_matrix`].
pub const NORM_GUARD: f64 = 1e-8;

/// Dense row-major matrix of `f64`. Vectors are represented as `n x 1`
/// or `1 x n` matrices depending on their role.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    /// All-zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a flat row-major buffer. Panics if the length does not
    /// match the shape; this is a programming error, not a data error.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "buffer length {} does not match shape {}x{}",
            data.len(),
            rows,
            cols
        );
        Tensor { rows, cols, data }
    }

    /// Build from row slices; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            assert_eq!(row.len(), cols, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor {
            rows: rows.len(),
            cols,
            data,
        }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Reset every entry to zero, keeping the allocation.
    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    /// True when every entry is finite (no NaN or infinity).
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Error out with a labelled numeric failure when any entry is non-finite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(KgatError::Numeric(format!(
                "non-finite value in {what} ({}x{})",
                self.rows, self.cols
            )))
        }
    }

    /// Euclidean norm of row `i`.
    #[inline]
    pub fn row_norm(&self, i: usize) -> f64 {
        self.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Dot product of two equal-length slices.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable softmax over the unmasked entries of `scores`.
///
/// Masked positions come out exactly `0.0`; the unmasked ones sum to 1.
/// The maximum unmasked score is subtracted before exponentiation so large
/// scores cannot overflow. Normalizing over a fully masked input is an
/// error rather than a NaN.
pub fn masked_softmax(scores: &[f64], keep: &[bool]) -> Result<Vec<f64>> {
    assert_eq!(scores.len(), keep.len(), "mask length mismatch");
    let support: Vec<usize> = (0..scores.len()).filter(|&i| keep[i]).collect();
    masked_softmax_indices(scores, &support)
}

/// Softmax over an explicit list of positions; all other entries are 0.
pub fn masked_softmax_indices(scores: &[f64], support: &[usize]) -> Result<Vec<f64>> {
    if support.is_empty() {
        return Err(KgatError::EmptySupport);
    }
    let max = support
        .iter()
        .map(|&i| scores[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; scores.len()];
    let mut total = 0.0;
    for &i in support {
        let e = (scores[i] - max).exp();
        out[i] = e;
        total += e;
    }
    for &i in support {
        out[i] /= total;
    }
    Ok(out)
}

/// Cache of intermediate quantities from [`cosine_matrix_cached`], kept so
/// reverse-mode differentiation can avoid recomputing norms.
#[derive(Debug, Clone)]
pub struct CosineCache {
    /// Unclamped similarity values, row-major `a.rows x b.rows`.
    pub raw: Vec<f64>,
    /// Euclidean norms of the rows of `a`.
    pub norm_a: Vec<f64>,
    /// Euclidean norms of the rows of `b`.
    pub norm_b: Vec<f64>,
}

/// Pairwise cosine similarity between the rows of `a` and the rows of `b`.
///
/// Entry `(i, j)` is `<a_i, b_j> / max(|a_i| * |b_j|, NORM_GUARD)`, clamped
/// into `[-1, 1]` to absorb rounding excursions. Zero rows therefore map to
/// zero similarity instead of NaN.
pub fn cosine_matrix(a: &Tensor, b: &Tensor) -> Tensor {
    cosine_matrix_cached(a, b).0
}

/// As [`cosine_matrix`], also returning the cache needed for its gradient.
pub fn cosine_matrix_cached(a: &Tensor, b: &Tensor) -> (Tensor, CosineCache) {
    assert_eq!(a.cols(), b.cols(), "cosine operands must share width");
    let norm_a: Vec<f64> = (0..a.rows()).map(|i| a.row_norm(i)).collect();
    let norm_b: Vec<f64> = (0..b.rows()).map(|j| b.row_norm(j)).collect();
    let mut raw = Vec::with_capacity(a.rows() * b.rows());
    let mut out = Tensor::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let ra = a.row(i);
        for j in 0..b.rows() {
            let denom = (norm_a[i] * norm_b[j]).max(NORM_GUARD);
            let v = dot(ra, b.row(j)) / denom;
            raw.push(v);
            out.set(i, j, v.clamp(-1.0, 1.0));
        }
    }
    (
        out,
        CosineCache {
            raw,
            norm_a,
            norm_b,
        },
    )
}
