//! Tall-and-skinny QR by tree reduction of per-chunk triangular factors,
//! column-norm accumulation, the R-SVD and the fused column normalization `R D⁻¹`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::{axpy, dot, jacobi_svd, reflector, HouseholderQr};
use crate::matio::RowChunk;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TsqrError {
    #[error("dimension mismatch: {left} vs {right} columns")]
    DimensionMismatch { left: usize, right: usize },
    #[error("{}", zero_norm_message(.columns))]
    ZeroNorm { columns: Vec<usize> },
    #[error("not tall-and-skinny: {rows} rows < {cols} columns")]
    NotTallSkinny { rows: u64, cols: usize },
    #[error("matrix is not a valid triangular factor: {0}")]
    NotTriangular(String),
}

fn zero_norm_message(columns: &[usize]) -> String {
    match columns {
        [j] => format!("column {j} has zero norm"),
        _ => format!("columns {columns:?} have zero norm"),
    }
}

/// Upper-triangular `n × n` factor with a nonnegative diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularFactor {
    r: DMatrix<f64>,
}

impl TriangularFactor {
    /// The factor of an empty row set.
    pub fn zeros(n: usize) -> Self {
        Self {
            r: DMatrix::zeros(n, n),
        }
    }

    /// Validates shape, triangularity and the sign convention.
    pub fn from_matrix(r: DMatrix<f64>) -> Result<Self, TsqrError> {
        let (rows, cols) = r.shape();
        if rows != cols || cols == 0 {
            return Err(TsqrError::NotTriangular(format!("shape {rows}x{cols}")));
        }
        for j in 0..cols {
            if r[(j, j)] < 0.0 {
                return Err(TsqrError::NotTriangular(format!(
                    "negative diagonal at {j}"
                )));
            }
            for i in j + 1..rows {
                if r[(i, j)] != 0.0 {
                    return Err(TsqrError::NotTriangular(format!(
                        "nonzero entry at ({i}, {j})"
                    )));
                }
            }
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(TsqrError::NotTriangular("non-finite entry".into()));
        }
        Ok(Self { r })
    }

    pub fn n(&self) -> usize {
        self.r.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.r
    }

    fn flip_negative_rows(&mut self) {
        let n = self.n();
        for i in 0..n {
            if self.r[(i, i)] < 0.0 {
                for j in i..n {
                    self.r[(i, j)] = -self.r[(i, j)];
                }
            }
        }
    }
}

/// QR of one chunk; returns `R` with `RᵀR = chunkᵀ chunk`.
pub fn factor_chunk(chunk: &RowChunk) -> TriangularFactor {
    let (c, n) = (chunk.rows(), chunk.cols());
    let mut colmajor = vec![0.0; c * n];
    for (i, row) in chunk.data().chunks_exact(n).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            colmajor[j * c + i] = v;
        }
    }
    let qr = HouseholderQr::new(c, n, colmajor);
    let (k, r) = qr.r_nonneg();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..k.min(j + 1) {
            out[(i, j)] = r[j * k + i];
        }
    }
    TriangularFactor { r: out }
}

/// `R` of the stacked pair `[top; bottom]`.
///
/// Each reflector only touches one row of `top` and the leading rows of
/// `bottom`, so the cost is `O(n³)` instead of a dense `2n × n` QR.
pub fn combine(
    top: &TriangularFactor,
    bottom: &TriangularFactor,
) -> Result<TriangularFactor, TsqrError> {
    let n = top.n();
    if bottom.n() != n {
        return Err(TsqrError::DimensionMismatch {
            left: n,
            right: bottom.n(),
        });
    }
    let mut t = top.r.clone();
    let mut b = bottom.r.clone();
    let bs = b.as_mut_slice();
    for j in 0..n {
        let (left, right) = bs.split_at_mut((j + 1) * n);
        let tail = &mut left[j * n..j * n + j + 1];
        let Some((alpha, v0, beta)) = reflector(t[(j, j)], tail) else {
            continue;
        };
        for l in j + 1..n {
            let target = &mut right[(l - j - 1) * n..(l - j - 1) * n + j + 1];
            let s = beta * (v0 * t[(j, l)] + dot(tail, target));
            t[(j, l)] -= s * v0;
            axpy(-s, tail, target);
        }
        t[(j, j)] = alpha;
        tail.fill(0.0);
    }
    let mut out = TriangularFactor { r: t };
    out.flip_negative_rows();
    Ok(out)
}

/// Which per-column norm to divide by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    L2,
}

/// Per-column ℓ1 norms and sums of squares, mergeable across chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    l1: Vec<f64>,
    sumsq: Vec<f64>,
}

impl ColumnStats {
    pub fn zeros(n: usize) -> Self {
        Self {
            l1: vec![0.0; n],
            sumsq: vec![0.0; n],
        }
    }

    pub fn from_chunk(chunk: &RowChunk) -> Self {
        let mut stats = Self::zeros(chunk.cols());
        for row in chunk.data().chunks_exact(chunk.cols()) {
            for ((a, s), &v) in stats.l1.iter_mut().zip(stats.sumsq.iter_mut()).zip(row) {
                *a += v.abs();
                *s += v * v;
            }
        }
        stats
    }

    /// Rebuilds stats from stored norms.
    pub fn from_norms(l1: Vec<f64>, l2: Vec<f64>) -> Result<Self, TsqrError> {
        if l1.len() != l2.len() {
            return Err(TsqrError::DimensionMismatch {
                left: l1.len(),
                right: l2.len(),
            });
        }
        Ok(Self {
            l1,
            sumsq: l2.iter().map(|v| v * v).collect(),
        })
    }

    pub fn merge(&self, other: &Self) -> Result<Self, TsqrError> {
        if self.l1.len() != other.l1.len() {
            return Err(TsqrError::DimensionMismatch {
                left: self.l1.len(),
                right: other.l1.len(),
            });
        }
        Ok(Self {
            l1: self.l1.iter().zip(&other.l1).map(|(a, b)| a + b).collect(),
            sumsq: self
                .sumsq
                .iter()
                .zip(&other.sumsq)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.l1.len()
    }

    pub fn l1(&self) -> &[f64] {
        &self.l1
    }

    pub fn l2(&self) -> Vec<f64> {
        self.sumsq.iter().map(|s| s.sqrt()).collect()
    }

    pub fn norms(&self, kind: NormKind) -> Vec<f64> {
        match kind {
            NormKind::L1 => self.l1.clone(),
            NormKind::L2 => self.l2(),
        }
    }

    /// Columns whose selected norm is zero.
    pub fn zero_columns(&self, kind: NormKind) -> Vec<usize> {
        self.norms(kind)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v <= 0.0)
            .map(|(j, _)| j)
            .collect()
    }
}

/// `R = U_R Σ Vᵀ`; only `Σ` and `Vᵀ` are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSvd {
    pub singular_values: Vec<f64>,
    pub vt: DMatrix<f64>,
}

impl ReducedSvd {
    /// `Σ Vᵀ`, the SVD-reduced data handed to selection.
    pub fn reduced_matrix(&self) -> DMatrix<f64> {
        let mut m = self.vt.clone();
        for (i, &s) in self.singular_values.iter().enumerate() {
            m.row_mut(i).scale_mut(s);
        }
        m
    }
}

pub fn rsvd(r: &TriangularFactor) -> ReducedSvd {
    let (singular_values, v) = jacobi_svd(&r.r);
    ReducedSvd {
        singular_values,
        vt: v.transpose(),
    }
}

/// Divides column `j` of `m` by `norms[j]`; errors list every zero column.
pub fn scale_matrix_columns(m: &DMatrix<f64>, norms: &[f64]) -> Result<DMatrix<f64>, TsqrError> {
    if m.ncols() != norms.len() {
        return Err(TsqrError::DimensionMismatch {
            left: m.ncols(),
            right: norms.len(),
        });
    }
    let zero: Vec<usize> = (0..norms.len()).filter(|&j| norms[j] <= 0.0).collect();
    if !zero.is_empty() {
        return Err(TsqrError::ZeroNorm { columns: zero });
    }
    let mut out = m.clone();
    for (j, &d) in norms.iter().enumerate() {
        out.column_mut(j).unscale_mut(d);
    }
    Ok(out)
}

/// `R̂ = R D⁻¹`: the triangular factor of the column-normalized data.
pub fn apply_column_scaling(
    r: &TriangularFactor,
    stats: &ColumnStats,
    kind: NormKind,
) -> Result<TriangularFactor, TsqrError> {
    Ok(TriangularFactor {
        r: scale_matrix_columns(&r.r, &stats.norms(kind))?,
    })
}
