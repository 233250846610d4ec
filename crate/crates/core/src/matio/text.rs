//! Delimited text matrices: one row per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::chunk::{ChunkSource, CountingRead, ReadCounter, RowChunk};
use super::MatioError;

/// Field separator for text matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Separator {
    /// Any run of ASCII whitespace.
    #[default]
    Whitespace,
    Char(char),
}

impl Separator {
    fn split<'a>(&self, line: &'a str) -> Box<dyn Iterator<Item = &'a str> + 'a> {
        match *self {
            Separator::Whitespace => Box::new(line.split_ascii_whitespace()),
            Separator::Char(c) => Box::new(line.split(c).map(str::trim)),
        }
    }

    fn as_str(&self) -> String {
        match *self {
            Separator::Whitespace => " ".into(),
            Separator::Char(c) => c.to_string(),
        }
    }
}

pub struct TextReader<R> {
    lines: std::io::Lines<BufReader<CountingRead<R>>>,
    sep: Separator,
    cols: usize,
    chunk_rows: usize,
    next_row: u64,
    parsed: u64,
    line_no: usize,
    first: Option<Vec<f64>>,
    counter: ReadCounter,
}

impl TextReader<File> {
    pub fn open(
        path: impl AsRef<Path>,
        sep: Separator,
        chunk_rows: usize,
    ) -> Result<Self, MatioError> {
        Self::new(File::open(path)?, sep, chunk_rows)
    }
}

impl<R: std::io::Read> TextReader<R> {
    /// Reads the first data row eagerly to learn the column count.
    pub fn new(inner: R, sep: Separator, chunk_rows: usize) -> Result<Self, MatioError> {
        if chunk_rows == 0 {
            return Err(MatioError::Invalid(
                "target chunk rows must be at least 1".into(),
            ));
        }
        let counter = ReadCounter::new();
        let lines =
            BufReader::with_capacity(1 << 20, CountingRead::new(inner, counter.clone())).lines();
        let mut reader = Self {
            lines,
            sep,
            cols: 0,
            chunk_rows,
            next_row: 0,
            parsed: 0,
            line_no: 0,
            first: None,
            counter,
        };
        let first = reader
            .next_row_values()?
            .ok_or_else(|| MatioError::Invalid("text input has no data rows".into()))?;
        reader.cols = first.len();
        reader.first = Some(first);
        Ok(reader)
    }

    fn next_row_values(&mut self) -> Result<Option<Vec<f64>>, MatioError> {
        for line in self.lines.by_ref() {
            let line = line?;
            self.line_no += 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let row = self.parsed;
            let mut values = Vec::with_capacity(self.cols);
            for (col, field) in self.sep.split(trimmed).enumerate() {
                let v: f64 = field.parse().map_err(|_| MatioError::Parse {
                    line: self.line_no,
                    msg: format!("cannot parse {field:?} as a number"),
                })?;
                if !v.is_finite() {
                    return Err(MatioError::NonFinite { row, col });
                }
                values.push(v);
            }
            if self.cols != 0 && values.len() != self.cols {
                return Err(MatioError::Parse {
                    line: self.line_no,
                    msg: format!("expected {} fields, found {}", self.cols, values.len()),
                });
            }
            self.parsed += 1;
            return Ok(Some(values));
        }
        Ok(None)
    }
}

impl<R: std::io::Read + Send> ChunkSource for TextReader<R> {
    fn cols(&self) -> usize {
        self.cols
    }

    fn rows_hint(&self) -> Option<u64> {
        None
    }

    fn next_chunk(&mut self) -> Result<Option<RowChunk>, MatioError> {
        let mut data = Vec::with_capacity(self.chunk_rows.min(1 << 16) * self.cols);
        let mut rows = 0;
        if let Some(first) = self.first.take() {
            data.extend_from_slice(&first);
            rows += 1;
        }
        while rows < self.chunk_rows {
            match self.next_row_values()? {
                Some(v) => {
                    data.extend_from_slice(&v);
                    rows += 1;
                }
                None => break,
            }
        }
        if rows == 0 {
            return Ok(None);
        }
        let chunk = RowChunk::new(self.next_row, self.cols, data)?;
        self.next_row += rows as u64;
        self.counter.add_chunk(rows);
        Ok(Some(chunk))
    }

    fn counter(&self) -> &ReadCounter {
        &self.counter
    }
}

/// Writes row-major values as delimited text using shortest round-trip formatting.
pub fn write_text<W: Write>(
    out: W,
    cols: usize,
    data: &[f64],
    sep: Separator,
) -> Result<(), MatioError> {
    let mut out = BufWriter::new(out);
    let sep = sep.as_str();
    for row in data.chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(&sep))?;
    }
    out.flush()?;
    Ok(())
}
