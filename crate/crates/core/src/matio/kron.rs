//! Row-pair Kronecker expansion `X = A ⊗ A`.
//!
//! Row `i·m_a + j` of `X` is `kron(a_i, a_j)`: entry `p·n_a + q` equals
//! `A[i, p] · A[j, q]`.

use std::path::Path;
use std::sync::Arc;

use super::binary::{BinaryReader, BinaryWriter, MatrixHeader};
use super::chunk::{ChunkSource, ReadCounter, RowChunk};
use super::MatioError;

/// Streams the rows of `A ⊗ A` from an in-memory `A`.
#[derive(Debug, Clone)]
pub struct KronSource {
    a: Arc<Vec<f64>>,
    rows_a: usize,
    cols_a: usize,
    rows: u64,
    chunk_rows: usize,
    next_row: u64,
    counter: ReadCounter,
}

/// Shape of `A ⊗ A`, checked against the binary format limits.
pub fn kron_shape(rows_a: usize, cols_a: usize) -> Result<MatrixHeader, MatioError> {
    let overflow = || MatioError::Overflow(format!("kronecker square of {rows_a} x {cols_a}"));
    let rows = (rows_a as u64)
        .checked_mul(rows_a as u64)
        .ok_or_else(overflow)?;
    let cols = cols_a.checked_mul(cols_a).ok_or_else(overflow)?;
    let header = MatrixHeader::new(rows, cols).map_err(|_| overflow())?;
    header.payload_bytes().map_err(|_| overflow())?;
    Ok(header)
}

impl KronSource {
    pub fn new(
        rows_a: usize,
        cols_a: usize,
        a: Vec<f64>,
        chunk_rows: usize,
    ) -> Result<Self, MatioError> {
        if a.len() != rows_a * cols_a || a.is_empty() {
            return Err(MatioError::Invalid(
                "A buffer does not match its shape".into(),
            ));
        }
        if chunk_rows == 0 {
            return Err(MatioError::Invalid(
                "target chunk rows must be at least 1".into(),
            ));
        }
        let header = kron_shape(rows_a, cols_a)?;
        Ok(Self {
            a: Arc::new(a),
            rows_a,
            cols_a,
            rows: header.rows,
            chunk_rows,
            next_row: 0,
            counter: ReadCounter::new(),
        })
    }

    fn a_row(&self, i: usize) -> &[f64] {
        &self.a[i * self.cols_a..(i + 1) * self.cols_a]
    }
}

impl ChunkSource for KronSource {
    fn cols(&self) -> usize {
        self.cols_a * self.cols_a
    }

    fn rows_hint(&self) -> Option<u64> {
        Some(self.rows)
    }

    fn next_chunk(&mut self) -> Result<Option<RowChunk>, MatioError> {
        if self.next_row >= self.rows {
            return Ok(None);
        }
        let take = (self.rows - self.next_row).min(self.chunk_rows as u64) as usize;
        let cols = self.cols();
        let mut data = Vec::with_capacity(take * cols);
        for g in self.next_row..self.next_row + take as u64 {
            let i = (g / self.rows_a as u64) as usize;
            let j = (g % self.rows_a as u64) as usize;
            let (ai, aj) = (self.a_row(i), self.a_row(j));
            for &p in ai {
                data.extend(aj.iter().map(|&q| p * q));
            }
        }
        let chunk = RowChunk::new(self.next_row, cols, data)?;
        self.next_row += take as u64;
        self.counter.add_chunk(take);
        Ok(Some(chunk))
    }

    fn counter(&self) -> &ReadCounter {
        &self.counter
    }
}

/// Reads `A` from `input` and streams `A ⊗ A` to `output`.
pub fn expand_kronecker(
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
    chunk_rows: usize,
) -> Result<MatrixHeader, MatioError> {
    let (header_a, a) = BinaryReader::open(input, 1 << 16)?.read_all()?;
    let rows_a = usize::try_from(header_a.rows)
        .map_err(|_| MatioError::Overflow("A does not fit in memory".into()))?;
    let mut source = KronSource::new(rows_a, header_a.cols, a, chunk_rows)?;
    let header = kron_shape(rows_a, header_a.cols)?;
    let mut writer = BinaryWriter::create(output, header)?;
    while let Some(chunk) = source.next_chunk()? {
        writer.write_rows(chunk.data())?;
    }
    writer.finish()?;
    Ok(header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matio::chunks;

    fn expand(rows: usize, cols: usize, a: Vec<f64>, chunk: usize) -> Vec<f64> {
        let mut src = KronSource::new(rows, cols, a, chunk).unwrap();
        chunks(&mut src)
            .flat_map(|c| c.unwrap().into_data())
            .collect()
    }

    #[test]
    fn single_row() {
        assert_eq!(expand(1, 2, vec![1.0, 2.0], 3), vec![1.0, 2.0, 2.0, 4.0]);
    }

    #[test]
    fn identity_pairs_give_identity() {
        let x = expand(2, 2, vec![1.0, 0.0, 0.0, 1.0], 1);
        let mut eye = vec![0.0; 16];
        for i in 0..4 {
            eye[i * 4 + i] = 1.0;
        }
        assert_eq!(x, eye);
    }

    #[test]
    fn shape_scales_quadratically() {
        let h = kron_shape(200, 5).unwrap();
        assert_eq!((h.rows, h.cols), (40_000, 25));
        assert!(matches!(
            kron_shape(usize::MAX, 2),
            Err(MatioError::Overflow(_))
        ));
    }
}
