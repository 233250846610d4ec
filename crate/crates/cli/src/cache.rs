//! Reduced artifacts cached in the output directory.
//!
//! The cache is keyed by a SHA-256 of the matrix values, computed while the
//! pass streams them. A small index maps the input's path, size and mtime to
//! that hash so later runs can reuse the artifacts without reading the input.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::UNIX_EPOCH;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tsnmf::matio::{read_chunks, ChunkSource, MatioError, ReadCounter, RowChunk};
use tsnmf::{sketch_pass, stream_pass, PassOptions, ReducedArtifacts, SketchSpec};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

const INDEX: &str = "cache.json";
const REDUCED_DIR: &str = "reduced";

/// Wraps a source and hashes every value it yields, in row order.
pub struct HashingSource<S> {
    inner: S,
    hasher: Sha256,
    buf: Vec<u8>,
}

impl<S: ChunkSource> HashingSource<S> {
    pub fn new(inner: S) -> Self {
        let mut hasher = Sha256::new();
        hasher.update((inner.cols() as u64).to_le_bytes());
        Self {
            inner,
            hasher,
            buf: Vec::new(),
        }
    }

    pub fn hex_digest(self) -> String {
        self.hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

impl<S: ChunkSource> ChunkSource for HashingSource<S> {
    fn cols(&self) -> usize {
        self.inner.cols()
    }

    fn rows_hint(&self) -> Option<u64> {
        self.inner.rows_hint()
    }

    fn next_chunk(&mut self) -> Result<Option<RowChunk>, MatioError> {
        let chunk = self.inner.next_chunk()?;
        if let Some(c) = &chunk {
            self.buf.clear();
            for v in c.data() {
                self.buf.extend_from_slice(&v.to_le_bytes());
            }
            self.hasher.update(&self.buf);
        }
        Ok(chunk)
    }

    fn counter(&self) -> &ReadCounter {
        self.inner.counter()
    }
}

/// Cheap identity of an input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputKey {
    pub path: PathBuf,
    pub size: u64,
    pub mtime_ns: u128,
}

impl InputKey {
    pub fn of(path: &Path) -> CliResult<Self> {
        let meta = fs::metadata(path).map_err(|e| CliError::io("read", path, e))?;
        let mtime_ns = meta
            .modified()
            .ok()
            .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        Ok(Self {
            path: fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf()),
            size: meta.len(),
            mtime_ns,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CacheIndex {
    input: InputKey,
    content_hash: String,
}

/// Traffic against the input file during one command.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ReadStats {
    pub passes: u32,
    pub rows: u64,
    pub bytes: u64,
    pub chunks: u64,
    pub cache_hit: bool,
}

impl ReadStats {
    fn add(&mut self, c: &ReadCounter) {
        self.passes += 1;
        self.rows += c.rows();
        self.bytes += c.bytes();
        self.chunks += c.chunks();
    }
}

pub struct Prepared {
    pub artifacts: ReducedArtifacts,
    pub reads: ReadStats,
    pub input_key: InputKey,
}

fn reduced_dir(out: &Path) -> PathBuf {
    out.join(REDUCED_DIR)
}

fn load_cached(cfg: &RunConfig, key: &InputKey) -> Option<ReducedArtifacts> {
    let text = fs::read_to_string(cfg.output.join(INDEX)).ok()?;
    let index: CacheIndex = serde_json::from_str(&text).ok()?;
    if index.input != *key {
        return None;
    }
    let art = ReducedArtifacts::load(reduced_dir(&cfg.output)).ok()?;
    (art.meta.fingerprint == index.content_hash).then_some(art)
}

fn save(cfg: &RunConfig, key: &InputKey, art: &ReducedArtifacts) -> CliResult<()> {
    art.save(reduced_dir(&cfg.output))
        .map_err(CliError::from_store)?;
    let index = CacheIndex {
        input: key.clone(),
        content_hash: art.meta.fingerprint.clone(),
    };
    let path = cfg.output.join(INDEX);
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(&path, json + "\n").map_err(|e| CliError::io("cache", &path, e))
}

fn open(cfg: &RunConfig) -> CliResult<Box<dyn ChunkSource>> {
    read_chunks(&cfg.input, cfg.format.format(), cfg.chunk_rows)
        .map_err(|e| CliError::from_matio("read", e))
}

/// A cached sketch serves the run if it matches an explicit `--k`, or, with
/// the default size, if it was drawn from the same seed.
fn sketch_reusable(cfg: &RunConfig, cached: Option<SketchSpec>, want: SketchSpec) -> bool {
    match (cached, cfg.sketch_k) {
        (Some(c), Some(_)) => c == want,
        (Some(c), None) => c.seed == want.seed,
        (None, _) => false,
    }
}

/// Reduced artifacts for `cfg`, reading the input only when the cache cannot
/// serve them.
pub fn prepare(cfg: &RunConfig) -> CliResult<Prepared> {
    let key = InputKey::of(&cfg.input)?;
    let want_sketch = cfg.sketch();
    let mut reads = ReadStats::default();

    if cfg.use_cache {
        if let Some(mut art) = load_cached(cfg, &key) {
            cfg.validate_for(art.meta.n)?;
            reads.cache_hit = true;
            if let Some(spec) = want_sketch {
                if !sketch_reusable(cfg, art.sketch_spec(), spec) {
                    // R is reusable; only the sketch needs the data again.
                    let mut src = HashingSource::new(open(cfg)?);
                    let (stats, sketch) =
                        sketch_pass(&mut src, spec, rayon::current_num_threads() * 2)
                            .map_err(CliError::from_pass)?;
                    reads.add(src.counter());
                    if src.hex_digest() != art.meta.fingerprint {
                        return Err(CliError::data(
                            "cache",
                            "input changed while cached artifacts were in use",
                        ));
                    }
                    art.stats = stats;
                    art.meta.sketch = Some(tsnmf::store::SketchMeta {
                        k: spec.k,
                        seed: spec.seed,
                    });
                    art.sketch = Some(sketch);
                    save(cfg, &key, &art)?;
                }
            }
            return Ok(Prepared {
                artifacts: art,
                reads,
                input_key: key,
            });
        }
    }

    let src = open(cfg)?;
    cfg.validate_for(src.cols())?;
    let mut src = HashingSource::new(src);
    let out = stream_pass(
        &mut src,
        &PassOptions {
            sketch: want_sketch,
            order: cfg.order,
            ..PassOptions::default()
        },
    )
    .map_err(CliError::from_pass)?;
    reads.add(src.counter());
    let art = ReducedArtifacts::from_pass(out, src.hex_digest());
    save(cfg, &key, &art)?;
    Ok(Prepared {
        artifacts: art,
        reads,
        input_key: key,
    })
}
