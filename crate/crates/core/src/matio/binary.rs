//! Dense binary matrix files.
//!
//! Layout (little-endian):
//!
//! | offset | size | field                     |
//! |--------|------|---------------------------|
//! | 0      | 3    | magic `b"TSM"`            |
//! | 3      | 1    | format version (1)        |
//! | 4      | 8    | rows `m` (u64)            |
//! | 12     | 4    | cols `n` (u32)            |
//! | 16     | 8·mn | row-major `f64` payload   |

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::chunk::{ChunkSource, CountingRead, ReadCounter, RowChunk};
use super::MatioError;

pub const MAGIC: [u8; 3] = *b"TSM";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 16;

/// Shape of a stored matrix. Only `f64` row-major payloads exist in this version.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixHeader {
    pub rows: u64,
    pub cols: usize,
}

impl MatrixHeader {
    pub fn new(rows: u64, cols: usize) -> Result<Self, MatioError> {
        if cols == 0 {
            return Err(MatioError::Header(
                "matrix must have at least one column".into(),
            ));
        }
        if cols > u32::MAX as usize {
            return Err(MatioError::Header(format!(
                "{cols} columns exceed the format limit"
            )));
        }
        Ok(Self { rows, cols })
    }

    /// Payload size in bytes, or an overflow error when it is not addressable.
    pub fn payload_bytes(&self) -> Result<u64, MatioError> {
        self.rows
            .checked_mul(self.cols as u64)
            .and_then(|v| v.checked_mul(8))
            .and_then(|v| v.checked_add(HEADER_BYTES as u64))
            .map(|v| v - HEADER_BYTES as u64)
            .ok_or_else(|| MatioError::Overflow(format!("{} x {} matrix", self.rows, self.cols)))
    }

    pub fn encode(&self) -> [u8; HEADER_BYTES] {
        let mut out = [0u8; HEADER_BYTES];
        out[..3].copy_from_slice(&MAGIC);
        out[3] = VERSION;
        out[4..12].copy_from_slice(&self.rows.to_le_bytes());
        out[12..16].copy_from_slice(&(self.cols as u32).to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8; HEADER_BYTES]) -> Result<Self, MatioError> {
        if bytes[..3] != MAGIC {
            return Err(MatioError::Header("bad magic".into()));
        }
        if bytes[3] != VERSION {
            return Err(MatioError::Header(format!(
                "unsupported version {}",
                bytes[3]
            )));
        }
        let rows = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
        let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let header = Self::new(rows, cols)?;
        header.payload_bytes()?;
        Ok(header)
    }
}

/// Reads as many bytes as available up to `buf.len()`; returns the count.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize, MatioError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

/// Streaming reader over a binary matrix.
pub struct BinaryReader<R> {
    inner: CountingRead<R>,
    header: MatrixHeader,
    chunk_rows: usize,
    next_row: u64,
    counter: ReadCounter,
    buf: Vec<u8>,
}

impl BinaryReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>, chunk_rows: usize) -> Result<Self, MatioError> {
        let file = File::open(path)?;
        Self::new(BufReader::with_capacity(1 << 20, file), chunk_rows)
    }
}

impl<R: Read> BinaryReader<R> {
    pub fn new(inner: R, chunk_rows: usize) -> Result<Self, MatioError> {
        if chunk_rows == 0 {
            return Err(MatioError::Invalid(
                "target chunk rows must be at least 1".into(),
            ));
        }
        let counter = ReadCounter::new();
        let mut inner = CountingRead::new(inner, counter.clone());
        let mut raw = [0u8; HEADER_BYTES];
        let got = read_full(&mut inner, &mut raw)?;
        if got < HEADER_BYTES {
            return Err(MatioError::ShortHeader {
                expected: HEADER_BYTES,
                found: got,
            });
        }
        let header = MatrixHeader::decode(&raw)?;
        Ok(Self {
            inner,
            header,
            chunk_rows,
            next_row: 0,
            counter,
            buf: Vec::new(),
        })
    }

    pub fn header(&self) -> MatrixHeader {
        self.header
    }
}

impl<R: Read + Send> BinaryReader<R> {
    /// Reads every remaining row into one row-major buffer.
    pub fn read_all(mut self) -> Result<(MatrixHeader, Vec<f64>), MatioError> {
        let mut out = Vec::with_capacity((self.header.rows as usize) * self.header.cols);
        while let Some(chunk) = self.next_chunk()? {
            out.extend_from_slice(chunk.data());
        }
        Ok((self.header, out))
    }
}

impl<R: Read + Send> ChunkSource for BinaryReader<R> {
    fn cols(&self) -> usize {
        self.header.cols
    }

    fn rows_hint(&self) -> Option<u64> {
        Some(self.header.rows)
    }

    fn next_chunk(&mut self) -> Result<Option<RowChunk>, MatioError> {
        let cols = self.header.cols;
        if self.next_row >= self.header.rows {
            if self.next_row == self.header.rows {
                // Declared payload consumed; anything left is a format violation.
                let mut probe = [0u8; 1];
                if read_full(&mut self.inner, &mut probe)? != 0 {
                    return Err(MatioError::TrailingData {
                        rows: self.header.rows,
                        cols,
                    });
                }
                self.next_row += 1;
            }
            return Ok(None);
        }
        let take = (self.header.rows - self.next_row).min(self.chunk_rows as u64) as usize;
        let nbytes = take * cols * 8;
        self.buf.resize(nbytes, 0);
        let got = read_full(&mut self.inner, &mut self.buf)?;
        if got < nbytes {
            let expected = self.header.rows * cols as u64;
            let found = self.next_row * cols as u64 + (got / 8) as u64;
            return Err(MatioError::Truncated { expected, found });
        }
        let data: Vec<f64> = self
            .buf
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let chunk = RowChunk::new(self.next_row, cols, data)?;
        self.next_row += take as u64;
        self.counter.add_chunk(take);
        Ok(Some(chunk))
    }

    fn counter(&self) -> &ReadCounter {
        &self.counter
    }
}

/// Streaming writer; the declared row count is checked on [`BinaryWriter::finish`].
pub struct BinaryWriter<W: Write> {
    inner: W,
    header: MatrixHeader,
    written_rows: u64,
}

impl BinaryWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, header: MatrixHeader) -> Result<Self, MatioError> {
        let file = File::create(path)?;
        Self::new(BufWriter::with_capacity(1 << 20, file), header)
    }
}

impl<W: Write> BinaryWriter<W> {
    pub fn new(mut inner: W, header: MatrixHeader) -> Result<Self, MatioError> {
        header.payload_bytes()?;
        inner.write_all(&header.encode())?;
        Ok(Self {
            inner,
            header,
            written_rows: 0,
        })
    }

    /// Appends whole rows (row-major). Non-finite values are rejected.
    pub fn write_rows(&mut self, data: &[f64]) -> Result<(), MatioError> {
        let cols = self.header.cols;
        if !data.len().is_multiple_of(cols) {
            return Err(MatioError::Invalid("partial row written".into()));
        }
        let rows = (data.len() / cols) as u64;
        if self.written_rows + rows > self.header.rows {
            return Err(MatioError::TrailingData {
                rows: self.header.rows,
                cols,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(MatioError::NonFinite {
                row: self.written_rows + (pos / cols) as u64,
                col: pos % cols,
            });
        }
        let mut bytes = Vec::with_capacity(data.len() * 8);
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.inner.write_all(&bytes)?;
        self.written_rows += rows;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, MatioError> {
        if self.written_rows != self.header.rows {
            return Err(MatioError::Truncated {
                expected: self.header.rows * self.header.cols as u64,
                found: self.written_rows * self.header.cols as u64,
            });
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Writes a small row-major matrix in one call.
pub fn write_matrix(
    path: impl AsRef<Path>,
    rows: u64,
    cols: usize,
    data: &[f64],
) -> Result<(), MatioError> {
    let mut w = BinaryWriter::create(path, MatrixHeader::new(rows, cols)?)?;
    w.write_rows(data)?;
    w.finish()?;
    Ok(())
}

/// Reads a whole binary matrix into memory. Intended for small reduced artifacts.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<(MatrixHeader, Vec<f64>), MatioError> {
    BinaryReader::open(path, 1 << 16)?.read_all()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matio::chunks;
    use std::io::Cursor;

    fn encode(rows: u64, cols: usize, values: &[f64]) -> Vec<u8> {
        let mut w = BinaryWriter::new(Vec::new(), MatrixHeader { rows, cols }).unwrap();
        w.write_rows(values).unwrap();
        w.finish().unwrap()
    }

    #[test]
    fn ten_by_three_in_chunks_of_four() {
        let values: Vec<f64> = (0..30).map(|v| v as f64 * 0.5).collect();
        let bytes = encode(10, 3, &values);
        assert_eq!(bytes.len(), HEADER_BYTES + 30 * 8);
        let mut r = BinaryReader::new(Cursor::new(bytes.clone()), 4).unwrap();
        let got: Vec<RowChunk> = chunks(&mut r).collect::<Result<_, _>>().unwrap();
        let shape: Vec<_> = got.iter().map(|c| (c.row_offset(), c.rows())).collect();
        assert_eq!(shape, vec![(0, 4), (4, 4), (8, 2)]);
        assert_eq!(r.counter().rows(), 10);
        assert_eq!(r.counter().bytes(), bytes.len() as u64);
    }

    #[test]
    fn single_chunk_when_target_exceeds_rows() {
        let bytes = encode(5, 2, &[1.0; 10]);
        let mut r = BinaryReader::new(Cursor::new(bytes), 100).unwrap();
        let got: Vec<RowChunk> = chunks(&mut r).collect::<Result<_, _>>().unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].rows(), 5);
    }

    #[test]
    fn short_payload_is_reported() {
        let mut bytes = MatrixHeader { rows: 6, cols: 2 }.encode().to_vec();
        for v in 0..10 {
            bytes.extend_from_slice(&(v as f64).to_le_bytes());
        }
        let mut r = BinaryReader::new(Cursor::new(bytes), 4).unwrap();
        let err = chunks(&mut r).collect::<Result<Vec<_>, _>>().unwrap_err();
        assert!(
            err.to_string().contains("payload shorter than declared"),
            "{err}"
        );
    }

    #[test]
    fn empty_file_is_short() {
        let err = BinaryReader::new(Cursor::new(Vec::new()), 4).err().unwrap();
        assert!(err.to_string().contains("payload shorter than declared"));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = encode(2, 2, &[1.0; 4]);
        bytes.extend_from_slice(&[0u8; 8]);
        let mut r = BinaryReader::new(Cursor::new(bytes), 4).unwrap();
        let err = chunks(&mut r).collect::<Result<Vec<_>, _>>().unwrap_err();
        assert!(matches!(err, MatioError::TrailingData { .. }));
    }

    #[test]
    fn non_finite_entry_reports_position() {
        let mut bytes = MatrixHeader { rows: 3, cols: 2 }.encode().to_vec();
        for v in [1.0, 2.0, 3.0, f64::INFINITY, 5.0, 6.0] {
            bytes.extend_from_slice(&f64::to_le_bytes(v));
        }
        let mut r = BinaryReader::new(Cursor::new(bytes), 2).unwrap();
        let err = chunks(&mut r).collect::<Result<Vec<_>, _>>().unwrap_err();
        assert!(
            matches!(err, MatioError::NonFinite { row: 1, col: 1 }),
            "{err}"
        );
    }

    #[test]
    fn bad_magic() {
        let mut bytes = MatrixHeader { rows: 1, cols: 1 }.encode().to_vec();
        bytes[0] = b'X';
        bytes.extend_from_slice(&1.0f64.to_le_bytes());
        assert!(matches!(
            BinaryReader::new(Cursor::new(bytes), 1).err().unwrap(),
            MatioError::Header(_)
        ));
    }
}
