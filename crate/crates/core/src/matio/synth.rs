//! Synthetic separable and near-separable test matrices.
//!
//! `X = W [I_r H'] Π + N` with `W` (m×r), `H'` (r×(n−r)) drawn Uniform[0,1)
//! and `N` drawn Uniform[0, ε). Random draws come from ChaCha8 keyed by the
//! seed, one stream per purpose, so output is identical for any chunking:
//!
//! * stream 0: `H'` in row-major order (row t, column c);
//! * stream `i + 1`: row `i` of `W` (r values) followed, when ε > 0, by row `i`
//!   of `N` (n values, pre-scaled by ε).

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::binary::{BinaryWriter, MatrixHeader};
use super::chunk::{ChunkSource, ReadCounter, RowChunk};
use super::MatioError;

/// Column map applied after `[I_r H']`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Permutation {
    #[default]
    Identity,
    /// Swap columns `i` and `10 i` for `i = 2, …, r − 1`.
    TenfoldSwap,
    /// `X(:, p) = Y(:, source[p])`.
    Explicit(Vec<usize>),
}

impl Permutation {
    /// Returns `source` with `X(:, p) = Y(:, source[p])`.
    pub fn source_map(&self, n: usize, r: usize) -> Result<Vec<usize>, MatioError> {
        let mut map: Vec<usize> = (0..n).collect();
        match self {
            Permutation::Identity => {}
            Permutation::TenfoldSwap => {
                for i in 2..r {
                    let j = 10 * i;
                    if j >= n {
                        return Err(MatioError::Invalid(format!(
                            "tenfold swap needs n > {} for r = {r}",
                            10 * (r - 1)
                        )));
                    }
                    map.swap(i, j);
                }
            }
            Permutation::Explicit(src) => {
                let mut seen = vec![false; n];
                if src.len() != n
                    || src
                        .iter()
                        .any(|&s| s >= n || std::mem::replace(&mut seen[s], true))
                {
                    return Err(MatioError::Invalid(
                        "explicit permutation is not a bijection".into(),
                    ));
                }
                map.clone_from(src);
            }
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub m: u64,
    pub n: usize,
    pub r: usize,
    pub noise: f64,
    pub seed: u64,
    pub permutation: Permutation,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), MatioError> {
        if self.n == 0 || self.m == 0 {
            return Err(MatioError::Invalid("m and n must be positive".into()));
        }
        if self.r == 0 || self.r > self.n {
            return Err(MatioError::Invalid(format!(
                "rank r = {} must satisfy 1 <= r <= n = {}",
                self.r, self.n
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(MatioError::Invalid(format!(
                "noise magnitude {} must be finite and >= 0",
                self.noise
            )));
        }
        self.permutation.source_map(self.n, self.r)?;
        Ok(())
    }
}

/// What the generator planted.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    /// Column of `X` holding generating column `t`, for `t = 0..r`.
    pub extreme_columns: Vec<usize>,
    /// `(I_r H') Π`, r×n.
    pub h_true: DMatrix<f64>,
}

impl SyntheticTruth {
    pub fn k_star_sorted(&self) -> Vec<usize> {
        let mut k = self.extreme_columns.clone();
        k.sort_unstable();
        k
    }
}

/// Streams rows of a synthetic matrix without materializing it.
pub struct SyntheticSource {
    spec: SyntheticSpec,
    /// `[I_r H']` stored row-major, r×n.
    mixing: Vec<f64>,
    source: Vec<usize>,
    chunk_rows: usize,
    next_row: u64,
    counter: ReadCounter,
}

impl SyntheticSource {
    pub fn new(spec: SyntheticSpec, chunk_rows: usize) -> Result<Self, MatioError> {
        spec.validate()?;
        if chunk_rows == 0 {
            return Err(MatioError::Invalid(
                "target chunk rows must be at least 1".into(),
            ));
        }
        let (n, r) = (spec.n, spec.r);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(0);
        let mut mixing = vec![0.0; r * n];
        for t in 0..r {
            mixing[t * n + t] = 1.0;
        }
        for t in 0..r {
            for c in r..n {
                mixing[t * n + c] = rng.random::<f64>();
            }
        }
        let source = spec.permutation.source_map(n, r)?;
        Ok(Self {
            spec,
            mixing,
            source,
            chunk_rows,
            next_row: 0,
            counter: ReadCounter::new(),
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn truth(&self) -> SyntheticTruth {
        let (n, r) = (self.spec.n, self.spec.r);
        let mut extreme_columns = vec![0; r];
        for (p, &s) in self.source.iter().enumerate() {
            if s < r {
                extreme_columns[s] = p;
            }
        }
        let h_true = DMatrix::from_fn(r, n, |t, p| self.mixing[t * n + self.source[p]]);
        SyntheticTruth {
            extreme_columns,
            h_true,
        }
    }

    fn fill_row(&self, row: u64, w: &mut [f64], y: &mut [f64], out: &mut [f64]) {
        let n = self.spec.n;
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(row + 1);
        for wt in w.iter_mut() {
            *wt = rng.random::<f64>();
        }
        y.fill(0.0);
        for (&wt, mix) in w.iter().zip(self.mixing.chunks_exact(n)) {
            for (yc, &h) in y.iter_mut().zip(mix) {
                *yc += wt * h;
            }
        }
        for (p, o) in out.iter_mut().enumerate() {
            *o = y[self.source[p]];
        }
        if self.spec.noise > 0.0 {
            for o in out.iter_mut() {
                *o += self.spec.noise * rng.random::<f64>();
            }
        }
    }
}

impl ChunkSource for SyntheticSource {
    fn cols(&self) -> usize {
        self.spec.n
    }

    fn rows_hint(&self) -> Option<u64> {
        Some(self.spec.m)
    }

    fn next_chunk(&mut self) -> Result<Option<RowChunk>, MatioError> {
        if self.next_row >= self.spec.m {
            return Ok(None);
        }
        let n = self.spec.n;
        let take = (self.spec.m - self.next_row).min(self.chunk_rows as u64) as usize;
        let mut data = vec![0.0; take * n];
        let mut w = vec![0.0; self.spec.r];
        let mut y = vec![0.0; n];
        for (i, out) in data.chunks_exact_mut(n).enumerate() {
            self.fill_row(self.next_row + i as u64, &mut w, &mut y, out);
        }
        let chunk = RowChunk::new(self.next_row, n, data)?;
        self.next_row += take as u64;
        self.counter.add_chunk(take);
        Ok(Some(chunk))
    }

    fn counter(&self) -> &ReadCounter {
        &self.counter
    }
}

/// Writes a synthetic matrix to `path` chunk by chunk and returns the planted truth.
pub fn generate_separable(
    spec: &SyntheticSpec,
    path: impl AsRef<Path>,
    chunk_rows: usize,
) -> Result<SyntheticTruth, MatioError> {
    let mut source = SyntheticSource::new(spec.clone(), chunk_rows)?;
    let mut writer = BinaryWriter::create(path, MatrixHeader::new(spec.m, spec.n)?)?;
    while let Some(chunk) = source.next_chunk()? {
        writer.write_rows(chunk.data())?;
    }
    writer.finish()?;
    Ok(source.truth())
}
