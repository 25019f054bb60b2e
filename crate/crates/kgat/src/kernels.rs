//! Gaussian kernel banks and kernel pooling over similarity matrices.
//!
//! A kernel bank turns one row of a token-similarity matrix into a fixed
//! `K`-dimensional feature vector: each kernel sums a Gaussian response
//! over the row's unmasked columns and takes the log of that (clamped)
//! sum. One sharp kernel centered at 1.0 counts near-exact matches; the
//! remaining kernels tile the rest of the cosine range softly.

use crate::error::{KgatError, Result};
use crate::tensor::Tensor;

/// Width of the exact-match kernel in [`KernelBank::default_bank`].
pub const EXACT_MATCH_DELTA: f64 = 1e-3;
/// Width of every soft kernel in [`KernelBank::default_bank`].
pub const SOFT_DELTA: f64 = 0.1;
/// Floor applied to each kernel's response sum before the log.
pub const SUM_FLOOR: f64 = 1e-10;

/// A single Gaussian kernel with mean `mu` and width `delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub mu: f64,
    pub delta: f64,
}

impl Kernel {
    /// Response of this kernel to a single similarity value.
    #[inline]
    pub fn response(&self, x: f64) -> f64 {
        let d = x - self.mu;
        (-d * d / (2.0 * self.delta * self.delta)).exp()
    }
}

/// An ordered list of Gaussian kernels applied jointly during pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    kernels: Vec<Kernel>,
}

impl KernelBank {
    /// Build a bank from explicit kernels. Widths must be positive and
    /// all parameters finite.
    pub fn new(kernels: Vec<Kernel>) -> Result<Self> {
        if kernels.is_empty() {
            return Err(KgatError::Data("kernel bank must not be empty".into()));
        }
        for k in &kernels {
            if !k.mu.is_finite() || !k.delta.is_finite() || k.delta <= 0.0 {
                return Err(KgatError::Data(format!(
                    "invalid kernel (mu={}, delta={})",
                    k.mu, k.delta
                )));
            }
        }
        Ok(KernelBank { kernels })
    }

    /// The standard bank of `k` kernels: one exact-match kernel at
    /// `(1.0, 1e-3)` followed by `k - 1` soft kernels whose means are
    /// evenly spaced from `0.95` down to `-0.95` with width `0.1`.
    ///
    /// `k` must be odd and at least 3 so the soft means tile the range
    /// symmetrically.
    pub fn default_bank(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(KgatError::Data(format!(
                "kernel count must be at least 2, got {k}"
            )));
        }
        if k % 2 == 0 {
            return Err(KgatError::Data(format!(
                "kernel count must be odd, got {k}"
            )));
        }
        let mut kernels = Vec::with_capacity(k);
        kernels.push(Kernel {
            mu: 1.0,
            delta: EXACT_MATCH_DELTA,
        });
        let soft = k - 1;
        let step = 1.9 / (soft - 1) as f64;
        for i in 0..soft {
            kernels.push(Kernel {
                mu: 0.95 - i as f64 * step,
                delta: SOFT_DELTA,
            });
        }
        Ok(KernelBank { kernels })
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }
}

/// A similarity matrix together with the row and column positions that
/// carry real tokens. Masked positions stay in the matrix but take no
/// part in pooling.
#[derive(Debug, Clone)]
pub struct TranslationMatrix {
    pub values: Tensor,
    /// Row indices holding real tokens.
    pub rows: Vec<usize>,
    /// Column indices holding real tokens.
    pub cols: Vec<usize>,
}

/// Intermediate responses kept from pooling so its gradient can be formed
/// without recomputing any exponentials.
#[derive(Debug, Clone)]
pub struct PoolCache {
    /// Gaussian responses, indexed `[row_idx][col_idx][kernel]`, flattened.
    pub gauss: Vec<f64>,
    /// Pre-floor response sums, indexed `[row_idx][kernel]`, flattened.
    pub sums: Vec<f64>,
}

/// Pool one row of a similarity matrix into `K` log-sum features.
///
/// `cols` selects which entries of the row participate; it must be
/// non-empty. Each feature is `ln(max(sum_j response_k(row[j]), 1e-10))`.
pub fn kernel_pool_row(row: &[f64], cols: &[usize], bank: &KernelBank) -> Result<Vec<f64>> {
    if cols.is_empty() {
        return Err(KgatError::EmptySupport);
    }
    let mut sums = vec![0.0; bank.len()];
    for &j in cols {
        let x = row[j];
        for (k, kernel) in bank.kernels().iter().enumerate() {
            sums[k] += kernel.response(x);
        }
    }
    Ok(sums.iter().map(|s| s.max(SUM_FLOOR).ln()).collect())
}

/// Pool a similarity matrix into per-row kernel features.
///
/// Output has one row per row of `m` and `K` columns; rows not listed in
/// `rows` come out all-zero. Returns the feature matrix together with the
/// cache its gradient needs.
pub fn kernel_pool_cached(
    m: &Tensor,
    rows: &[usize],
    cols: &[usize],
    bank: &KernelBank,
) -> Result<(Tensor, PoolCache)> {
    if cols.is_empty() {
        return Err(KgatError::EmptySupport);
    }
    let k = bank.len();
    let mut features = Tensor::zeros(m.rows(), k);
    let mut gauss = vec![0.0; rows.len() * cols.len() * k];
    let mut sums = vec![0.0; rows.len() * k];
    for (ri, &r) in rows.iter().enumerate() {
        let row = m.row(r);
        let row_sums = &mut sums[ri * k..(ri + 1) * k];
        for (ci, &c) in cols.iter().enumerate() {
            let x = row[c];
            let g = &mut gauss[(ri * cols.len() + ci) * k..(ri * cols.len() + ci + 1) * k];
            for (ki, kernel) in bank.kernels().iter().enumerate() {
                let resp = kernel.response(x);
                g[ki] = resp;
                row_sums[ki] += resp;
            }
        }
        for (ki, s) in row_sums.iter().enumerate() {
            features.set(r, ki, s.max(SUM_FLOOR).ln());
        }
    }
    Ok((features, PoolCache { gauss, sums }))
}

/// Pool a similarity matrix into per-row kernel features (no cache).
pub fn kernel_pool(
    m: &Tensor,
    rows: &[usize],
    cols: &[usize],
    bank: &KernelBank,
) -> Result<Tensor> {
    Ok(kernel_pool_cached(m, rows, cols, bank)?.0)
}
