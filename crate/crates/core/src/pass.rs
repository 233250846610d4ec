//! The fused single pass: TSQR, column norms and (optionally) the Gaussian
//! sketch, computed from one traversal of the row stream.

use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matio::{ChunkSource, MatioError, RowChunk};
use crate::sketch::{
    sketch_chunk, RowGaussians, SeededGaussians, SketchError, SketchPartial, SketchResult,
};
use crate::tree::{CarryTree, CombineOrder};
use crate::tsqr::{combine, factor_chunk, ColumnStats, TriangularFactor, TsqrError};

#[derive(Debug, Error)]
pub enum PassError {
    #[error(transparent)]
    Read(#[from] MatioError),
    #[error(transparent)]
    Tsqr(#[from] TsqrError),
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error("input has no rows")]
    Empty,
}

/// Sketch request for the pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SketchSpec {
    pub k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct PassOptions {
    pub sketch: Option<SketchSpec>,
    pub order: CombineOrder,
    /// Chunks handed to the worker pool at a time (balanced order only).
    pub batch_chunks: usize,
}

impl Default for PassOptions {
    fn default() -> Self {
        Self {
            sketch: None,
            order: CombineOrder::Balanced,
            batch_chunks: rayon::current_num_threads().max(1) * 2,
        }
    }
}

/// Communication summary of one pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassLedger {
    pub chunks: u64,
    pub rows: u64,
    pub tree_depth: u32,
    pub combines: u64,
    /// Bytes of reduced data emitted per chunk, summed (R, norms and sketch).
    pub reduced_bytes: u64,
}

#[derive(Debug, Clone)]
pub struct PassOutput {
    pub r: TriangularFactor,
    pub stats: ColumnStats,
    pub sketch: Option<SketchResult>,
    pub ledger: PassLedger,
}

impl PassOutput {
    pub fn rows(&self) -> u64 {
        self.ledger.rows
    }
}

struct Partial {
    r: TriangularFactor,
    stats: ColumnStats,
    sketch: Option<SketchPartial>,
}

fn map_chunk(
    chunk: &RowChunk,
    sketch: Option<(usize, &Arc<dyn RowGaussians>)>,
) -> Result<Partial, PassError> {
    Ok(Partial {
        r: factor_chunk(chunk),
        stats: ColumnStats::from_chunk(chunk),
        sketch: match sketch {
            Some((k, g)) => Some(sketch_chunk(chunk, k, g.clone())?),
            None => None,
        },
    })
}

fn reduce(left: Partial, right: Partial) -> Result<Partial, PassError> {
    Ok(Partial {
        r: combine(&left.r, &right.r)?,
        stats: left.stats.merge(&right.stats)?,
        sketch: match (left.sketch, right.sketch) {
            (Some(a), Some(b)) => Some(a.merge(b)?),
            (a, b) => a.or(b),
        },
    })
}

fn reduced_bytes(n: usize, k: Option<usize>) -> u64 {
    let tri = n * (n + 1) / 2;
    ((tri + 2 * n + k.unwrap_or(0) * n) * 8) as u64
}

/// Streams every chunk of `source` exactly once.
pub fn stream_pass<S: ChunkSource + ?Sized>(
    source: &mut S,
    options: &PassOptions,
) -> Result<PassOutput, PassError> {
    let n = source.cols();
    let gaussians: Option<(usize, Arc<dyn RowGaussians>)> = options.sketch.map(|s| {
        (
            s.k,
            Arc::new(SeededGaussians { seed: s.seed }) as Arc<dyn RowGaussians>,
        )
    });
    if let Some((0, _)) = gaussians {
        return Err(SketchError::EmptySketch.into());
    }
    let sketch_ref = gaussians.as_ref().map(|(k, g)| (*k, g));

    let (partial, chunks, combines, depth) = match options.order {
        CombineOrder::Balanced => balanced(source, options.batch_chunks.max(1), sketch_ref)?,
        CombineOrder::FirstCome => first_come(source, sketch_ref)?,
    };
    let Some(partial) = partial else {
        return Err(PassError::Empty);
    };
    let rows = source.counter().rows();
    if rows < n as u64 {
        return Err(TsqrError::NotTallSkinny { rows, cols: n }.into());
    }
    let ledger = PassLedger {
        chunks,
        rows,
        tree_depth: depth,
        combines,
        reduced_bytes: chunks * reduced_bytes(n, options.sketch.map(|s| s.k)),
    };
    Ok(PassOutput {
        r: partial.r,
        stats: partial.stats,
        sketch: partial.sketch.map(SketchPartial::finish),
        ledger,
    })
}

/// Column stats and sketch only, skipping TSQR. Used to redraw `G` with a
/// new seed when `R` is already known.
pub fn sketch_pass<S: ChunkSource + ?Sized>(
    source: &mut S,
    spec: SketchSpec,
    batch_chunks: usize,
) -> Result<(ColumnStats, SketchResult), PassError> {
    let n = source.cols();
    let gaussians: Arc<dyn RowGaussians> = Arc::new(SeededGaussians { seed: spec.seed });
    let mut stats = ColumnStats::zeros(n);
    let mut sketch = SketchPartial::empty(spec.k, n, gaussians.clone())?;
    loop {
        let mut pending = Vec::with_capacity(batch_chunks.max(1));
        while pending.len() < batch_chunks.max(1) {
            match source.next_chunk()? {
                Some(c) => pending.push(c),
                None => break,
            }
        }
        if pending.is_empty() {
            break;
        }
        let mapped: Vec<Result<(ColumnStats, SketchPartial), PassError>> = pending
            .par_iter()
            .map(|c| {
                Ok((
                    ColumnStats::from_chunk(c),
                    sketch_chunk(c, spec.k, gaussians.clone())?,
                ))
            })
            .collect();
        for m in mapped {
            let (s, p) = m?;
            stats = stats.merge(&s)?;
            sketch = sketch.merge(p)?;
        }
    }
    if source.counter().rows() == 0 {
        return Err(PassError::Empty);
    }
    Ok((stats, sketch.finish()))
}

type Reduced = (Option<Partial>, u64, u64, u32);

fn balanced<S: ChunkSource + ?Sized>(
    source: &mut S,
    batch: usize,
    sketch: Option<(usize, &Arc<dyn RowGaussians>)>,
) -> Result<Reduced, PassError> {
    let mut tree = CarryTree::new(reduce);
    loop {
        let mut pending = Vec::with_capacity(batch);
        while pending.len() < batch {
            match source.next_chunk()? {
                Some(c) => pending.push(c),
                None => break,
            }
        }
        if pending.is_empty() {
            break;
        }
        let mapped: Vec<Result<Partial, PassError>> =
            pending.par_iter().map(|c| map_chunk(c, sketch)).collect();
        for m in mapped {
            tree.push(m?)?;
        }
    }
    let leaves = tree.leaves();
    let depth = tree.depth();
    Ok(match tree.finish()? {
        Some((p, combines)) => (Some(p), leaves, combines, depth),
        None => (None, 0, 0, 0),
    })
}

fn first_come<S: ChunkSource + ?Sized>(
    source: &mut S,
    sketch: Option<(usize, &Arc<dyn RowGaussians>)>,
) -> Result<Reduced, PassError> {
    let threads = rayon::current_num_threads().max(1);
    let source = Mutex::new(source);
    let acc: Mutex<(Option<Partial>, u64, u64)> = Mutex::new((None, 0, 0));
    let failure: Mutex<Option<PassError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                if failure.lock().unwrap().is_some() {
                    return;
                }
                let next = source.lock().unwrap().next_chunk();
                let step = next.map_err(PassError::from).and_then(|chunk| match chunk {
                    None => Ok(false),
                    Some(c) => {
                        let mapped = map_chunk(&c, sketch)?;
                        let mut guard = acc.lock().unwrap();
                        let prev = guard.0.take();
                        guard.0 = Some(match prev {
                            None => mapped,
                            Some(p) => {
                                guard.2 += 1;
                                reduce(p, mapped)?
                            }
                        });
                        guard.1 += 1;
                        Ok(true)
                    }
                });
                match step {
                    Ok(true) => {}
                    Ok(false) => return,
                    Err(e) => {
                        failure.lock().unwrap().get_or_insert(e);
                        return;
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let (p, chunks, combines) = acc.into_inner().unwrap();
    Ok((p, chunks, combines, combines.min(u32::MAX as u64) as u32))
}
