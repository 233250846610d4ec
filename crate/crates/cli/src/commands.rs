//! Subcommand implementations. Each returns a structured outcome so the
//! binary and the tests observe the same results.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;
use tsnmf::matio::{
    expand_kronecker, generate_separable, read_chunks, write_matrix, BinaryReader, Permutation,
    SyntheticSpec,
};
use tsnmf::nnls::SweepInputs;
use tsnmf::sketch::scale_columns;
use tsnmf::{
    compute_h, gp_select, relative_residual, rsvd, spa, sweep, xray_greedy, Algorithm, ExtremeSet,
    PassLedger, ReducedArtifacts, SelectError, SweepReport,
};

use crate::cache::{prepare, ReadStats};
use crate::config::{Normalization, Reduction, RunConfig};
use crate::error::{CliError, CliResult};

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let json = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, json + "\n").map_err(|e| CliError::io("write", path, e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io("write", path, e))
}

fn write_dense(path: &Path, m: &DMatrix<f64>) -> CliResult<()> {
    let row_major = m.transpose();
    write_matrix(path, m.nrows() as u64, m.ncols(), row_major.as_slice())
        .map_err(|e| CliError::from_matio("write", e))
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Clone, Serialize)]
pub struct TruthReport {
    #[serde(flatten)]
    pub spec: SyntheticSpec,
    /// Column holding generating column `t`.
    pub extreme_columns: Vec<usize>,
    pub k_star: Vec<usize>,
    pub h_true_file: String,
}

pub struct GenerateOutcome {
    pub matrix: PathBuf,
    pub truth: PathBuf,
    pub h_true: PathBuf,
    pub report: TruthReport,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn generate(spec: &SyntheticSpec, out: &Path, chunk_rows: usize) -> CliResult<GenerateOutcome> {
    spec.validate()
        .map_err(|e| CliError::usage("generate", e.to_string()))?;
    if chunk_rows == 0 {
        return Err(CliError::usage(
            "generate",
            "--chunk-rows must be at least 1",
        ));
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let truth = generate_separable(spec, out, chunk_rows)
        .map_err(|e| CliError::from_matio("generate", e))?;
    let h_true = sibling(out, "htrue.bin");
    write_dense(&h_true, &truth.h_true)?;
    let report = TruthReport {
        spec: spec.clone(),
        k_star: truth.k_star_sorted(),
        extreme_columns: truth.extreme_columns,
        h_true_file: h_true.file_name().unwrap().to_string_lossy().into_owned(),
    };
    let truth_path = sibling(out, "truth.json");
    write_json(&truth_path, &report)?;
    Ok(GenerateOutcome {
        matrix: out.to_path_buf(),
        truth: truth_path,
        h_true,
        report,
    })
}

pub fn parse_permutation(s: &str) -> Result<Permutation, String> {
    match s {
        "tenfold" => Ok(Permutation::TenfoldSwap),
        "identity" | "none" => Ok(Permutation::Identity),
        other => {
            let cols: Result<Vec<usize>, _> = other.split(',').map(|t| t.trim().parse()).collect();
            cols.map(Permutation::Explicit).map_err(|_| {
                format!("bad permutation {other:?} (tenfold, identity or a comma list)")
            })
        }
    }
}

// ---------------------------------------------------------------- kron

pub fn kron(input: &Path, out: &Path, chunk_rows: usize) -> CliResult<(u64, usize)> {
    if chunk_rows == 0 {
        return Err(CliError::usage("kron", "--chunk-rows must be at least 1"));
    }
    let header =
        expand_kronecker(input, out, chunk_rows).map_err(|e| CliError::from_matio("kron", e))?;
    Ok((header.rows, header.cols))
}

// ---------------------------------------------------------------- selection

/// Reduced data handed to selection and NNLS.
struct Reduced<'a> {
    art: &'a ReducedArtifacts,
    /// `R` or `ΣVᵀ`, never normalized; `H` and residuals use this.
    basis: DMatrix<f64>,
    gp_sketch: Option<tsnmf::SketchResult>,
}

impl<'a> Reduced<'a> {
    fn new(art: &'a ReducedArtifacts, reduction: Reduction, need_gp: bool) -> CliResult<Self> {
        let basis = match reduction {
            Reduction::Qr => art.r.matrix().clone(),
            Reduction::Svd => rsvd(&art.r).reduced_matrix(),
        };
        let gp_sketch = if need_gp {
            let s = art
                .sketch
                .as_ref()
                .ok_or_else(|| CliError::usage("select", "gp needs a sketch"))?;
            Some(
                scale_columns(s, &art.stats)
                    .map_err(|e| CliError::data("select", e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self {
            art,
            basis,
            gp_sketch,
        })
    }

    /// Selects up to `r` columns. Running out of candidates is a shortfall,
    /// not an error.
    fn select(&self, alg: Algorithm, r: usize, norm: Normalization) -> CliResult<ExtremeSet> {
        let res = match alg {
            Algorithm::Spa => {
                let stats = (norm == Normalization::L1).then_some(&self.art.stats);
                spa(&self.basis, r, stats)
            }
            Algorithm::Xray => xray_greedy(&self.basis, r),
            Algorithm::Gp => gp_select(self.gp_sketch.as_ref().expect("sketch prepared"), r),
        };
        match res {
            Ok(set) => Ok(set),
            Err(SelectError::Exhausted { partial }) => Ok(partial),
            Err(e) => Err(CliError::from_select(e)),
        }
    }
}

// ---------------------------------------------------------------- factorize

#[derive(Debug, Clone, Serialize)]
pub struct InputSummary {
    pub path: String,
    pub rows: u64,
    pub cols: usize,
    pub content_hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigSummary {
    pub reduction: Reduction,
    pub sketch_k: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlgorithmResult {
    pub extremes: ExtremeSet,
    pub normalization: Normalization,
    pub relative_residual: f64,
    pub h_file: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub algorithm: Algorithm,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FactorizeReport {
    pub input: InputSummary,
    pub config: ConfigSummary,
    pub results: Vec<AlgorithmResult>,
}

/// Run-specific facts kept out of the deterministic report.
#[derive(Debug, Clone, Serialize)]
pub struct RunLedger {
    pub reads: ReadStats,
    pub input_bytes: u64,
    pub pass: PassLedger,
    pub threads: usize,
    /// Selection plus NNLS per algorithm; empty for sweeps.
    pub timings: Vec<Timing>,
    pub seconds: f64,
}

pub struct FactorizeOutcome {
    pub report: FactorizeReport,
    pub ledger: RunLedger,
    pub h: Vec<DMatrix<f64>>,
}

fn input_summary(cfg: &RunConfig, art: &ReducedArtifacts) -> InputSummary {
    InputSummary {
        path: cfg.input.display().to_string(),
        rows: art.meta.rows,
        cols: art.meta.n,
        content_hash: art.meta.fingerprint.clone(),
    }
}

fn check_single_pass(
    cfg: &RunConfig,
    reads: &ReadStats,
    input_bytes: u64,
    rows: u64,
) -> CliResult<()> {
    if reads.passes == 0 {
        return Ok(());
    }
    if reads.passes != 1 || reads.bytes != input_bytes || reads.rows != rows {
        return Err(CliError::numerical(
            "pass",
            format!(
                "read contract violated: {} passes, {} of {} bytes, {} of {} rows",
                reads.passes, reads.bytes, input_bytes, reads.rows, rows
            ),
        ));
    }
    if cfg.verbose {
        eprintln!(
            "single pass verified: {} bytes, {} rows",
            reads.bytes, reads.rows
        );
    }
    Ok(())
}

fn print_ledger(ledger: &RunLedger) {
    let p = &ledger.pass;
    eprintln!(
        "communication: {} rows in {} chunks, combine tree depth {} with {} combines, {} bytes of reduced data",
        p.rows, p.chunks, p.tree_depth, p.combines, p.reduced_bytes
    );
    eprintln!(
        "input reads: {} pass(es), {} bytes (file {} bytes){}",
        ledger.reads.passes,
        ledger.reads.bytes,
        ledger.input_bytes,
        if ledger.reads.cache_hit {
            ", reduced artifacts from cache"
        } else {
            ""
        }
    );
}

fn pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::usage("config", format!("cannot start {threads} threads: {e}")))
}

pub fn factorize(cfg: &RunConfig) -> CliResult<FactorizeOutcome> {
    cfg.validate()?;
    if cfg.ranks.0.len() != 1 {
        return Err(CliError::usage(
            "config",
            "factorize takes a single --r; use sweep for ranges",
        ));
    }
    pool(cfg.threads)?.install(|| factorize_inner(cfg))
}

fn factorize_inner(cfg: &RunConfig) -> CliResult<FactorizeOutcome> {
    let start = Instant::now();
    create_dir(&cfg.output)?;
    let prepared = prepare(cfg)?;
    let art = &prepared.artifacts;
    check_single_pass(cfg, &prepared.reads, prepared.input_key.size, art.meta.rows)?;
    let r = cfg.ranks.0[0];
    let reduced = Reduced::new(art, cfg.reduction, cfg.algorithms.contains(&Algorithm::Gp))?;

    let mut results = Vec::new();
    let mut hs = Vec::new();
    let mut timings = Vec::new();
    for &alg in &cfg.algorithms {
        let t = Instant::now();
        let norm = cfg.normalization_for(alg);
        let set = reduced.select(alg, r, norm)?;
        if set.shortfall() > 0 {
            eprintln!(
                "warning: {alg} selected {} of {r} columns",
                set.indices.len()
            );
        }
        let h = compute_h(&reduced.basis, &set.indices).map_err(CliError::from_nnls)?;
        let residual =
            relative_residual(&reduced.basis, &set.indices, &h.h).map_err(CliError::from_nnls)?;
        let h_file = format!("{alg}.h.bin");
        if !set.indices.is_empty() {
            write_dense(&cfg.output.join(&h_file), &h.h)?;
        }
        write_json(&cfg.output.join(format!("{alg}.extremes.json")), &set)?;
        results.push(AlgorithmResult {
            extremes: set,
            normalization: norm,
            relative_residual: residual,
            h_file,
        });
        timings.push(Timing {
            algorithm: alg,
            seconds: t.elapsed().as_secs_f64(),
        });
        hs.push(h.h);
    }

    let report = FactorizeReport {
        input: input_summary(cfg, art),
        config: ConfigSummary {
            reduction: cfg.reduction,
            sketch_k: art
                .sketch
                .as_ref()
                .map(|s| s.k())
                .filter(|_| cfg.sketch().is_some()),
            seed: cfg.seed,
        },
        results,
    };
    write_json(&cfg.output.join("factorize.json"), &report)?;
    let ledger = RunLedger {
        reads: prepared.reads,
        input_bytes: prepared.input_key.size,
        pass: art.meta.ledger.clone(),
        threads: rayon::current_num_threads(),
        timings,
        seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&cfg.output.join("run.json"), &ledger)?;
    if cfg.verbose {
        print_ledger(&ledger);
    }
    Ok(FactorizeOutcome {
        report,
        ledger,
        h: hs,
    })
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, Serialize)]
pub struct SweepFile {
    pub input: InputSummary,
    pub config: ConfigSummary,
    #[serde(flatten)]
    pub report: SweepReport,
}

pub struct SweepOutcome {
    pub file: SweepFile,
    pub ledger: RunLedger,
}

pub fn sweep_cmd(cfg: &RunConfig) -> CliResult<SweepOutcome> {
    cfg.validate()?;
    pool(cfg.threads)?.install(|| sweep_inner(cfg))
}

fn sweep_inner(cfg: &RunConfig) -> CliResult<SweepOutcome> {
    let start = Instant::now();
    create_dir(&cfg.output)?;
    let prepared = prepare(cfg)?;
    let art = &prepared.artifacts;
    check_single_pass(cfg, &prepared.reads, prepared.input_key.size, art.meta.rows)?;
    let reduced = Reduced::new(art, cfg.reduction, cfg.algorithms.contains(&Algorithm::Gp))?;
    let select = |alg: Algorithm, r_max: usize| -> Result<ExtremeSet, String> {
        reduced
            .select(alg, r_max, cfg.normalization_for(alg))
            .map_err(|e| e.message)
    };
    let inputs = SweepInputs {
        h_basis: &reduced.basis,
        select: &select,
    };
    let report = sweep(&inputs, &cfg.algorithms, &cfg.ranks.0);
    let file = SweepFile {
        input: input_summary(cfg, art),
        config: ConfigSummary {
            reduction: cfg.reduction,
            sketch_k: art
                .sketch
                .as_ref()
                .map(|s| s.k())
                .filter(|_| cfg.sketch().is_some()),
            seed: cfg.seed,
        },
        report,
    };
    write_json(&cfg.output.join("sweep.json"), &file)?;
    let csv = cfg.output.join("sweep.csv");
    fs::write(&csv, file.report.to_csv()).map_err(|e| CliError::io("write", &csv, e))?;
    let ledger = RunLedger {
        reads: prepared.reads,
        input_bytes: prepared.input_key.size,
        pass: art.meta.ledger.clone(),
        threads: rayon::current_num_threads(),
        timings: Vec::new(),
        seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&cfg.output.join("sweep.run.json"), &ledger)?;
    if cfg.verbose {
        print_ledger(&ledger);
    }
    if let Some(bad) = file.report.records.iter().find(|c| c.error.is_some()) {
        eprintln!(
            "warning: {} at r = {} failed: {}",
            bad.algorithm,
            bad.r,
            bad.error.as_deref().unwrap_or_default()
        );
    }
    Ok(SweepOutcome { file, ledger })
}

// ---------------------------------------------------------------- inspect

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Inspection {
    Matrix {
        path: String,
        format: String,
        rows: u64,
        cols: usize,
        bytes: u64,
    },
    Artifacts {
        path: String,
        meta: tsnmf::store::ReducedMeta,
        extremes: Vec<ExtremeSet>,
    },
}

pub fn inspect(path: &Path) -> CliResult<Inspection> {
    if path.is_dir() {
        let art = ReducedArtifacts::load(path.join("reduced")).map_err(CliError::from_store)?;
        let mut extremes = Vec::new();
        for alg in Algorithm::ALL {
            let p = path.join(format!("{alg}.extremes.json"));
            if let Ok(text) = fs::read_to_string(&p) {
                let set: ExtremeSet = serde_json::from_str(&text)
                    .map_err(|e| CliError::data("inspect", format!("{}: {e}", p.display())))?;
                extremes.push(set);
            }
        }
        return Ok(Inspection::Artifacts {
            path: path.display().to_string(),
            meta: art.meta,
            extremes,
        });
    }
    let bytes = fs::metadata(path)
        .map_err(|e| CliError::io("inspect", path, e))?
        .len();
    if let Ok(r) = BinaryReader::open(path, 1) {
        let h = r.header();
        return Ok(Inspection::Matrix {
            path: path.display().to_string(),
            format: "binary".into(),
            rows: h.rows,
            cols: h.cols,
            bytes,
        });
    }
    let mut src =
        read_chunks(path, None, 1 << 14).map_err(|e| CliError::from_matio("inspect", e))?;
    while src
        .next_chunk()
        .map_err(|e| CliError::from_matio("inspect", e))?
        .is_some()
    {}
    Ok(Inspection::Matrix {
        path: path.display().to_string(),
        format: "text".into(),
        rows: src.counter().rows(),
        cols: src.cols(),
        bytes,
    })
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializes")
}
