use std::io::{self, Read};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::MatioError;

/// Default number of rows per streamed chunk.
pub const DEFAULT_CHUNK_ROWS: usize = 8192;

/// A contiguous block of matrix rows, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RowChunk {
    row_offset: u64,
    cols: usize,
    data: Vec<f64>,
}

impl RowChunk {
    /// Builds a chunk from row-major data. Fails on an empty block, a ragged
    /// buffer, or a non-finite entry.
    pub fn new(row_offset: u64, cols: usize, data: Vec<f64>) -> Result<Self, MatioError> {
        if cols == 0 {
            return Err(MatioError::Invalid(
                "chunk must have at least one column".into(),
            ));
        }
        if data.is_empty() || !data.len().is_multiple_of(cols) {
            return Err(MatioError::Invalid(format!(
                "chunk buffer of {} values is not a positive multiple of {} columns",
                data.len(),
                cols
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(MatioError::NonFinite {
                row: row_offset + (pos / cols) as u64,
                col: pos % cols,
            });
        }
        Ok(Self {
            row_offset,
            cols,
            data,
        })
    }

    /// Builds a chunk from a slice of equal-length rows.
    pub fn from_rows(row_offset: u64, rows: &[Vec<f64>]) -> Result<Self, MatioError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(MatioError::Invalid("ragged rows".into()));
        }
        Self::new(row_offset, cols, rows.concat())
    }

    pub fn row_offset(&self) -> u64 {
        self.row_offset
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Row-major values.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Global index one past the last row of this chunk.
    pub fn row_end(&self) -> u64 {
        self.row_offset + self.rows() as u64
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

#[derive(Debug, Default)]
struct Counts {
    rows: AtomicU64,
    bytes: AtomicU64,
    chunks: AtomicU64,
}

/// Shared instrumentation for a reader: rows, payload bytes and chunks handed out.
///
/// Clones share the same counters, so a caller can keep one handle while the
/// reader is moved into a streaming pass.
#[derive(Debug, Clone, Default)]
pub struct ReadCounter(Arc<Counts>);

impl ReadCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> u64 {
        self.0.rows.load(Ordering::Relaxed)
    }

    /// Raw bytes pulled from the underlying reader, header included.
    pub fn bytes(&self) -> u64 {
        self.0.bytes.load(Ordering::Relaxed)
    }

    pub fn chunks(&self) -> u64 {
        self.0.chunks.load(Ordering::Relaxed)
    }

    pub(crate) fn add_chunk(&self, rows: usize) {
        self.0.rows.fetch_add(rows as u64, Ordering::Relaxed);
        self.0.chunks.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn add_bytes(&self, n: usize) {
        self.0.bytes.fetch_add(n as u64, Ordering::Relaxed);
    }
}

/// `Read` adapter that records every byte it passes through.
#[derive(Debug)]
pub struct CountingRead<R> {
    inner: R,
    counter: ReadCounter,
}

impl<R> CountingRead<R> {
    pub fn new(inner: R, counter: ReadCounter) -> Self {
        Self { inner, counter }
    }
}

impl<R: Read> Read for CountingRead<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.counter.add_bytes(n);
        Ok(n)
    }
}

/// A single-consumer stream of row chunks partitioning `[0, m)` in order.
pub trait ChunkSource: Send {
    fn cols(&self) -> usize;

    /// Total row count when known before the stream is exhausted.
    fn rows_hint(&self) -> Option<u64>;

    /// Next chunk, or `None` once every row has been produced.
    fn next_chunk(&mut self) -> Result<Option<RowChunk>, MatioError>;

    fn counter(&self) -> &ReadCounter;
}

impl<S: ChunkSource + ?Sized> ChunkSource for Box<S> {
    fn cols(&self) -> usize {
        (**self).cols()
    }
    fn rows_hint(&self) -> Option<u64> {
        (**self).rows_hint()
    }
    fn next_chunk(&mut self) -> Result<Option<RowChunk>, MatioError> {
        (**self).next_chunk()
    }
    fn counter(&self) -> &ReadCounter {
        (**self).counter()
    }
}

/// Iterator view over any [`ChunkSource`].
pub struct Chunks<'a, S: ?Sized>(&'a mut S);

impl<S: ChunkSource + ?Sized> Iterator for Chunks<'_, S> {
    type Item = Result<RowChunk, MatioError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.0.next_chunk().transpose()
    }
}

pub fn chunks<S: ChunkSource + ?Sized>(source: &mut S) -> Chunks<'_, S> {
    Chunks(source)
}

/// Chunks an in-memory row-major matrix. Used by tests and small tools.
#[derive(Debug, Clone)]
pub struct MemorySource {
    data: Arc<Vec<f64>>,
    rows: usize,
    cols: usize,
    chunk_rows: usize,
    next_row: usize,
    counter: ReadCounter,
}

impl MemorySource {
    pub fn new(
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        chunk_rows: usize,
    ) -> Result<Self, MatioError> {
        Self::shared(rows, cols, Arc::new(data), chunk_rows)
    }

    /// Same as [`MemorySource::new`] but reuses an already shared buffer.
    pub fn shared(
        rows: usize,
        cols: usize,
        data: Arc<Vec<f64>>,
        chunk_rows: usize,
    ) -> Result<Self, MatioError> {
        if cols == 0 || chunk_rows == 0 {
            return Err(MatioError::Invalid(
                "cols and chunk_rows must be positive".into(),
            ));
        }
        if data.len() != rows * cols {
            return Err(MatioError::Truncated {
                expected: (rows * cols) as u64,
                found: data.len() as u64,
            });
        }
        Ok(Self {
            data,
            rows,
            cols,
            chunk_rows,
            next_row: 0,
            counter: ReadCounter::new(),
        })
    }
}

impl ChunkSource for MemorySource {
    fn cols(&self) -> usize {
        self.cols
    }

    fn rows_hint(&self) -> Option<u64> {
        Some(self.rows as u64)
    }

    fn next_chunk(&mut self) -> Result<Option<RowChunk>, MatioError> {
        if self.next_row >= self.rows {
            return Ok(None);
        }
        let start = self.next_row;
        let end = (start + self.chunk_rows).min(self.rows);
        self.next_row = end;
        let data = self.data[start * self.cols..end * self.cols].to_vec();
        self.counter.add_bytes(data.len() * 8);
        self.counter.add_chunk(end - start);
        RowChunk::new(start as u64, self.cols, data).map(Some)
    }

    fn counter(&self) -> &ReadCounter {
        &self.counter
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_source_partitions_rows() {
        let data: Vec<f64> = (0..30).map(f64::from).collect();
        let mut src = MemorySource::new(10, 3, data, 4).unwrap();
        let got: Vec<_> = chunks(&mut src).map(|c| c.unwrap()).collect();
        let shape: Vec<_> = got.iter().map(|c| (c.row_offset(), c.rows())).collect();
        assert_eq!(shape, vec![(0, 4), (4, 4), (8, 2)]);
        assert_eq!(src.counter().rows(), 10);
        assert_eq!(got[2].row(1), &[27.0, 28.0, 29.0]);
    }

    #[test]
    fn chunk_rejects_non_finite() {
        let err = RowChunk::new(5, 2, vec![1.0, 2.0, 3.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, MatioError::NonFinite { row: 6, col: 1 }));
    }
}
