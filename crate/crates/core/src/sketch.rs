//! Streaming Gaussian projection `Gᵀ X`.
//!
//! Row `i` of `G` is drawn from a ChaCha8 stream keyed by `(seed, i)`, so the
//! Gaussians never depend on how rows are chunked. Summation is pinned to the
//! rows' global positions as well: rows are grouped into aligned leaves of
//! [`LEAF_ROWS`] rows, each leaf is one GEMM over exactly the rows it holds,
//! and leaves are added pairwise along a fixed dyadic tree. Any partition of
//! the same rows therefore produces a bitwise identical sketch.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::matio::RowChunk;
use crate::tsqr::{scale_matrix_columns, ColumnStats, TsqrError};

/// Rows per aligned summation leaf.
pub const LEAF_ROWS: u64 = 512;

#[derive(Debug, Error, PartialEq)]
pub enum SketchError {
    #[error("sketch rows k must be at least 1")]
    EmptySketch,
    #[error("sketch shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("sketch seed mismatch: {left} vs {right}")]
    SeedMismatch { left: u64, right: u64 },
    #[error("row {0} appears in both operands of a merge")]
    Overlap(u64),
    #[error(transparent)]
    Scaling(#[from] TsqrError),
}

/// Source of the per-row Gaussian vectors `g_i`.
pub trait RowGaussians: Send + Sync + fmt::Debug {
    /// Identifies the generator; merges require equal keys.
    fn key(&self) -> u64;

    /// Writes `g_row` (length k) into `out`.
    fn fill(&self, row: u64, out: &mut [f64]);
}

/// Standard normal vectors from a counter-based generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeededGaussians {
    pub seed: u64,
}

impl RowGaussians for SeededGaussians {
    fn key(&self) -> u64 {
        self.seed
    }

    fn fill(&self, row: u64, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(row);
        for v in out {
            *v = rng.sample(StandardNormal);
        }
    }
}

/// Mergeable partial sketch over some set of rows.
#[derive(Debug, Clone)]
pub struct SketchPartial {
    k: usize,
    n: usize,
    gaussians: Arc<dyn RowGaussians>,
    /// Complete dyadic nodes keyed by `(level, index)`, k×n row-major.
    nodes: BTreeMap<(u32, u64), Vec<f64>>,
    /// Raw rows of leaves that are only partly covered, keyed by leaf then row.
    pending: BTreeMap<u64, BTreeMap<u64, Vec<f64>>>,
    rows: u64,
}

impl SketchPartial {
    pub fn empty(
        k: usize,
        n: usize,
        gaussians: Arc<dyn RowGaussians>,
    ) -> Result<Self, SketchError> {
        if k == 0 {
            return Err(SketchError::EmptySketch);
        }
        Ok(Self {
            k,
            n,
            gaussians,
            nodes: BTreeMap::new(),
            pending: BTreeMap::new(),
            rows: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Rows folded in so far.
    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn seed(&self) -> u64 {
        self.gaussians.key()
    }

    fn insert_node(&mut self, mut level: u32, mut index: u64, mut value: Vec<f64>) {
        while let Some(sibling) = self.nodes.remove(&(level, index ^ 1)) {
            let (mut left, right) = if index & 1 == 0 {
                (value, sibling)
            } else {
                (sibling, value)
            };
            for (l, r) in left.iter_mut().zip(&right) {
                *l += r;
            }
            value = left;
            level += 1;
            index >>= 1;
        }
        self.nodes.insert((level, index), value);
    }

    /// `Σ g_i x_iᵀ` over consecutive rows starting at global row `first`.
    fn leaf_product(&self, first: u64, rows: &[f64]) -> Vec<f64> {
        let (k, n) = (self.k, self.n);
        let c = rows.len() / n;
        let mut g = vec![0.0; c * k];
        for (i, gi) in g.chunks_exact_mut(k).enumerate() {
            self.gaussians.fill(first + i as u64, gi);
        }
        gemm_tn(k, c, n, &g, rows)
    }

    /// Leaf value from whatever rows of it are present, in row order.
    fn flush_leaf(&mut self, leaf: u64) {
        if let Some(rows) = self.pending.remove(&leaf) {
            let value = self.scattered_product(&rows);
            self.insert_node(0, leaf, value);
        }
    }

    fn scattered_product(&self, rows: &BTreeMap<u64, Vec<f64>>) -> Vec<f64> {
        let (k, n) = (self.k, self.n);
        let c = rows.len();
        let mut g = vec![0.0; c * k];
        let mut block = Vec::with_capacity(c * n);
        for (i, (&row, values)) in rows.iter().enumerate() {
            self.gaussians.fill(row, &mut g[i * k..(i + 1) * k]);
            block.extend_from_slice(values);
        }
        gemm_tn(k, c, n, &g, &block)
    }

    fn add_pending_row(&mut self, row: u64, values: Vec<f64>) -> Result<(), SketchError> {
        let leaf = row / LEAF_ROWS;
        if self.nodes.keys().any(|&(l, i)| leaf >> l == i) {
            return Err(SketchError::Overlap(row));
        }
        let entry = self.pending.entry(leaf).or_default();
        if entry.insert(row, values).is_some() {
            return Err(SketchError::Overlap(row));
        }
        if entry.len() as u64 == LEAF_ROWS {
            self.flush_leaf(leaf);
        }
        Ok(())
    }

    /// Folds another partial sketch in. Exact: the result depends only on the
    /// union of rows, never on merge order.
    pub fn merge(mut self, other: SketchPartial) -> Result<SketchPartial, SketchError> {
        if (self.k, self.n) != (other.k, other.n) {
            return Err(SketchError::ShapeMismatch {
                left: (self.k, self.n),
                right: (other.k, other.n),
            });
        }
        if self.seed() != other.seed() {
            return Err(SketchError::SeedMismatch {
                left: self.seed(),
                right: other.seed(),
            });
        }
        self.rows += other.rows;
        for ((level, index), value) in other.nodes {
            self.insert_node(level, index, value);
        }
        for (_, rows) in other.pending {
            for (row, values) in rows {
                self.add_pending_row(row, values)?;
            }
        }
        Ok(self)
    }

    /// Final `Gᵀ X` over the covered rows.
    pub fn finish(mut self) -> SketchResult {
        let leaves: Vec<u64> = self.pending.keys().copied().collect();
        for leaf in leaves {
            self.flush_leaf(leaf);
        }
        let mut nodes: Vec<((u32, u64), Vec<f64>)> = self.nodes.into_iter().collect();
        nodes.sort_by_key(|&((level, index), _)| index << level);
        let mut acc = vec![0.0; self.k * self.n];
        for (_, v) in nodes {
            for (a, b) in acc.iter_mut().zip(&v) {
                *a += b;
            }
        }
        SketchResult {
            seed: self.gaussians.key(),
            entries: DMatrix::from_row_slice(self.k, self.n, &acc),
        }
    }
}

/// `gᵀ x` for row-major `g` (c×k) and `x` (c×n); result k×n row-major.
fn gemm_tn(k: usize, c: usize, n: usize, g: &[f64], x: &[f64]) -> Vec<f64> {
    assert!(g.len() == c * k && x.len() == c * n);
    let mut out = vec![0.0; k * n];
    // SAFETY: the asserted lengths cover every element addressed by these strides.
    unsafe {
        matrixmultiply::dgemm(
            k,
            c,
            n,
            1.0,
            g.as_ptr(),
            1,
            k as isize,
            x.as_ptr(),
            n as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// Sketch of one chunk: `Σ_i g_i x_iᵀ` over its rows.
pub fn sketch_chunk(
    chunk: &RowChunk,
    k: usize,
    gaussians: Arc<dyn RowGaussians>,
) -> Result<SketchPartial, SketchError> {
    let n = chunk.cols();
    let mut part = SketchPartial::empty(k, n, gaussians)?;
    let (start, end) = (chunk.row_offset(), chunk.row_end());
    let mut row = start;
    while row < end {
        let leaf = row / LEAF_ROWS;
        let leaf_end = ((leaf + 1) * LEAF_ROWS).min(end);
        let local = (row - start) as usize..(leaf_end - start) as usize;
        if row == leaf * LEAF_ROWS && leaf_end == (leaf + 1) * LEAF_ROWS {
            let value = part.leaf_product(row, &chunk.data()[local.start * n..local.end * n]);
            part.insert_node(0, leaf, value);
        } else {
            for i in local {
                part.add_pending_row(start + i as u64, chunk.row(i).to_vec())?;
            }
        }
        row = leaf_end;
    }
    part.rows = end - start;
    Ok(part)
}

/// A finished `k × n` Gaussian sketch.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchResult {
    pub seed: u64,
    pub entries: DMatrix<f64>,
}

impl SketchResult {
    pub fn k(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n(&self) -> usize {
        self.entries.ncols()
    }

    /// Entrywise sum of two finished sketches built with the same generator.
    pub fn merge(&self, other: &SketchResult) -> Result<SketchResult, SketchError> {
        if self.seed != other.seed {
            return Err(SketchError::SeedMismatch {
                left: self.seed,
                right: other.seed,
            });
        }
        if self.entries.shape() != other.entries.shape() {
            return Err(SketchError::ShapeMismatch {
                left: self.entries.shape(),
                right: other.entries.shape(),
            });
        }
        Ok(SketchResult {
            seed: self.seed,
            entries: &self.entries + &other.entries,
        })
    }
}

/// `(GᵀX) D⁻¹` with `D` the ℓ1 column norms: the sketch of the normalized data.
pub fn scale_columns(s: &SketchResult, stats: &ColumnStats) -> Result<SketchResult, SketchError> {
    Ok(SketchResult {
        seed: s.seed,
        entries: scale_matrix_columns(&s.entries, stats.l1())?,
    })
}

/// Default sketch size for separation ranks up to `r_max`: `⌈2 r ln r⌉`.
pub fn default_sketch_rows(r_max: usize) -> usize {
    let r = r_max.max(2) as f64;
    (2.0 * r_max as f64 * r.ln()).ceil() as usize
}
