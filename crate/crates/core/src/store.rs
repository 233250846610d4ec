//! Persisted pass results: `R`, column norms and the sketch as binary
//! matrices next to a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matio::{read_matrix, write_matrix, MatioError};
use crate::pass::{PassLedger, PassOutput, SketchSpec};
use crate::sketch::SketchResult;
use crate::tsqr::{ColumnStats, TriangularFactor, TsqrError};

const META: &str = "reduced.json";
const R_FILE: &str = "r.bin";
const NORMS_FILE: &str = "norms.bin";
const SKETCH_FILE: &str = "sketch.bin";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Matio(#[from] MatioError),
    #[error(transparent)]
    Tsqr(#[from] TsqrError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad sidecar {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("stored artifact inconsistent: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchMeta {
    pub k: usize,
    pub seed: u64,
}

/// JSON sidecar describing the binary artifacts in a directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedMeta {
    pub n: usize,
    pub rows: u64,
    /// Rows of `norms.bin`: ℓ1 then ℓ2.
    pub norms: Vec<String>,
    pub sketch: Option<SketchMeta>,
    pub ledger: PassLedger,
    /// Caller-supplied identity of the input, e.g. a content hash.
    pub fingerprint: String,
}

/// Everything selection and NNLS need, without the original matrix.
#[derive(Debug, Clone)]
pub struct ReducedArtifacts {
    pub meta: ReducedMeta,
    pub r: TriangularFactor,
    pub stats: ColumnStats,
    pub sketch: Option<SketchResult>,
}

impl ReducedArtifacts {
    pub fn from_pass(out: PassOutput, fingerprint: impl Into<String>) -> Self {
        let meta = ReducedMeta {
            n: out.r.n(),
            rows: out.ledger.rows,
            norms: vec!["l1".into(), "l2".into()],
            sketch: out.sketch.as_ref().map(|s| SketchMeta {
                k: s.k(),
                seed: s.seed,
            }),
            ledger: out.ledger,
            fingerprint: fingerprint.into(),
        };
        Self {
            meta,
            r: out.r,
            stats: out.stats,
            sketch: out.sketch,
        }
    }

    pub fn sketch_spec(&self) -> Option<SketchSpec> {
        self.meta.sketch.as_ref().map(|s| SketchSpec {
            k: s.k,
            seed: s.seed,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), StoreError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| StoreError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let n = self.meta.n;
        write_dense(&dir.join(R_FILE), self.r.matrix())?;
        let mut norms = self.stats.l1().to_vec();
        norms.extend(self.stats.l2());
        write_matrix(dir.join(NORMS_FILE), 2, n, &norms)?;
        match &self.sketch {
            Some(s) => write_dense(&dir.join(SKETCH_FILE), &s.entries)?,
            None => remove_if_present(&dir.join(SKETCH_FILE))?,
        }
        let path = dir.join(META);
        let json = serde_json::to_string_pretty(&self.meta).map_err(|source| StoreError::Json {
            path: path.clone(),
            source,
        })?;
        fs::write(&path, json + "\n").map_err(|source| StoreError::Io { path, source })
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        let path = dir.join(META);
        let text = fs::read_to_string(&path).map_err(|source| StoreError::Io {
            path: path.clone(),
            source,
        })?;
        let meta: ReducedMeta =
            serde_json::from_str(&text).map_err(|source| StoreError::Json { path, source })?;
        let n = meta.n;

        let r = read_dense(&dir.join(R_FILE), n, n)?;
        let r = TriangularFactor::from_matrix(r)?;
        let (_, norms) = read_matrix(dir.join(NORMS_FILE))?;
        if norms.len() != 2 * n {
            return Err(StoreError::Inconsistent(format!(
                "norms file holds {} values, expected {}",
                norms.len(),
                2 * n
            )));
        }
        let stats = ColumnStats::from_norms(norms[..n].to_vec(), norms[n..].to_vec())?;
        let sketch = match &meta.sketch {
            Some(s) => Some(SketchResult {
                seed: s.seed,
                entries: read_dense(&dir.join(SKETCH_FILE), s.k, n)?,
            }),
            None => None,
        };
        Ok(Self {
            meta,
            r,
            stats,
            sketch,
        })
    }

    /// True when a sidecar exists in `dir`.
    pub fn exists(dir: impl AsRef<Path>) -> bool {
        dir.as_ref().join(META).is_file()
    }
}

fn write_dense(path: &Path, m: &DMatrix<f64>) -> Result<(), StoreError> {
    let row_major = m.transpose();
    write_matrix(path, m.nrows() as u64, m.ncols(), row_major.as_slice())?;
    Ok(())
}

fn read_dense(path: &Path, rows: usize, cols: usize) -> Result<DMatrix<f64>, StoreError> {
    let (header, data) = read_matrix(path)?;
    if header.rows != rows as u64 || header.cols != cols {
        return Err(StoreError::Inconsistent(format!(
            "{} is {}x{}, expected {rows}x{cols}",
            path.display(),
            header.rows,
            header.cols
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

fn remove_if_present(path: &Path) -> Result<(), StoreError> {
    match fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(source) => Err(StoreError::Io {
            path: path.to_path_buf(),
            source,
        }),
    }
}
