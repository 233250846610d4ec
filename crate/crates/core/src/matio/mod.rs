//! Matrix storage, chunked streaming, synthetic generation and Kronecker expansion.

mod binary;
mod chunk;
mod kron;
mod synth;
mod text;

use std::fs::File;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

pub use binary::{
    read_matrix, write_matrix, BinaryReader, BinaryWriter, MatrixHeader, HEADER_BYTES,
};
pub use chunk::{
    chunks, ChunkSource, Chunks, CountingRead, MemorySource, ReadCounter, RowChunk,
    DEFAULT_CHUNK_ROWS,
};
pub use kron::{expand_kronecker, kron_shape, KronSource};
pub use synth::{generate_separable, Permutation, SyntheticSource, SyntheticSpec, SyntheticTruth};
pub use text::{write_text, Separator, TextReader};

#[derive(Debug, Error)]
pub enum MatioError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("payload shorter than declared: expected {expected} values, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("payload shorter than declared: {found} of {expected} header bytes")]
    ShortHeader { expected: usize, found: usize },
    #[error("payload longer than declared {rows} x {cols}")]
    TrailingData { rows: u64, cols: usize },
    #[error("non-finite entry at row {row}, column {col}")]
    NonFinite { row: u64, col: usize },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("output size overflow: {0}")]
    Overflow(String),
    #[error("{0}")]
    Invalid(String),
}

/// On-disk encoding of a matrix file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Binary,
    Text(Separator),
}

/// Opens `path` for chunked reading. `None` sniffs the binary magic and
/// otherwise falls back to whitespace-separated text.
pub fn read_chunks(
    path: impl AsRef<Path>,
    format: Option<Format>,
    target_chunk_rows: usize,
) -> Result<Box<dyn ChunkSource>, MatioError> {
    let path = path.as_ref();
    let format = match format {
        Some(f) => f,
        None => {
            let mut magic = [0u8; 3];
            let mut f = File::open(path)?;
            let got = f.read(&mut magic)?;
            if got < 3 || magic == *b"TSM" {
                Format::Binary
            } else {
                Format::Text(Separator::Whitespace)
            }
        }
    };
    Ok(match format {
        Format::Binary => Box::new(BinaryReader::open(path, target_chunk_rows)?),
        Format::Text(sep) => Box::new(TextReader::open(path, sep, target_chunk_rows)?),
    })
}
