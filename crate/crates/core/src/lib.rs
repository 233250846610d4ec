//! Single-pass separable NMF for tall-and-skinny matrices.
//!
//! One streaming pass over `X` produces the TSQR factor `R`, per-column norms
//! and an optional Gaussian sketch `GᵀX`. Extreme columns are then selected
//! with SPA, greedy XRAY or Gaussian projection, and `H` is fitted by NNLS,
//! all on `n × n` (or `k × n`) data.

mod dense;

pub mod matio;
pub mod nnls;
pub mod pass;
pub mod select;
pub mod sketch;
pub mod store;
pub mod tree;
pub mod tsqr;

pub use matio::{ChunkSource, MatioError, MemorySource, ReadCounter, RowChunk};
pub use nnls::{
    compute_h, kkt_report, nnls_solve, relative_residual, sweep, CoefficientMatrix, KktReport,
    NnlsError, NnlsProblem, SweepInputs, SweepRecord, SweepReport,
};
pub use pass::{
    sketch_pass, stream_pass, PassError, PassLedger, PassOptions, PassOutput, SketchSpec,
};
pub use select::{gp_select, spa, xray_greedy, Algorithm, ExtremeSet, SelectError};
pub use sketch::{default_sketch_rows, SketchResult};
pub use store::{ReducedArtifacts, StoreError};
pub use tree::CombineOrder;
pub use tsqr::{rsvd, ColumnStats, NormKind, ReducedSvd, TriangularFactor, TsqrError};
