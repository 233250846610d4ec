//! Command-line front end for `tsnmf`.

pub mod cache;
pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tsnmf::matio::{SyntheticSpec, DEFAULT_CHUNK_ROWS};
use tsnmf::CombineOrder;

use crate::commands::{parse_permutation, to_pretty_json};
use crate::config::{AlgorithmList, InputFormat, Normalization, RankList, Reduction, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(
    name = "tsnmf",
    version,
    about = "Single-pass separable NMF for tall-and-skinny matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic separable matrix and its ground truth.
    Generate(GenerateArgs),
    /// Expand `A` into `A ⊗ A`, one row pair at a time.
    Kron(KronArgs),
    /// One pass over the input, then selection and NNLS at a single rank.
    Factorize(RunArgs),
    /// Residual curve over a range of ranks from the reduced artifacts.
    Sweep(RunArgs),
    /// Describe a matrix file or an output directory.
    Inspect { path: PathBuf },
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    m: u64,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    r: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// `tenfold` (swap columns i and 10i), `identity`, or an explicit comma list.
    #[arg(long, default_value = "tenfold", value_parser = parse_permutation)]
    permutation: tsnmf::matio::Permutation,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CHUNK_ROWS)]
    chunk_rows: usize,
}

#[derive(Args, Debug)]
struct KronArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CHUNK_ROWS)]
    chunk_rows: usize,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, short)]
    input: PathBuf,
    /// Output directory; also holds the reduced-artifact cache.
    #[arg(long, short)]
    out: PathBuf,
    /// Comma list of spa, xray, gp.
    #[arg(long = "alg", default_value = "spa")]
    algorithms: AlgorithmList,
    /// Rank, inclusive range `a..b`, or comma list.
    #[arg(long)]
    r: RankList,
    #[arg(long, default_value = "qr")]
    reduction: Reduction,
    /// SPA normalization (default l1). gp always uses l1, xray never normalizes.
    #[arg(long)]
    norm: Option<Normalization>,
    /// Sketch rows for gp (default ⌈2 r ln r⌉ at the largest r, or the cached sketch).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = DEFAULT_CHUNK_ROWS)]
    chunk_rows: usize,
    #[arg(long, default_value = "auto")]
    format: InputFormat,
    /// Combine chunk factors as workers finish instead of in a fixed tree.
    #[arg(long)]
    first_come: bool,
    /// Always re-read the input.
    #[arg(long)]
    no_cache: bool,
    #[arg(long, short)]
    verbose: bool,
}

impl RunArgs {
    fn into_config(self) -> RunConfig {
        RunConfig {
            input: self.input,
            format: self.format,
            chunk_rows: self.chunk_rows,
            algorithms: self.algorithms.0,
            ranks: self.r,
            reduction: self.reduction,
            normalization: self.norm,
            sketch_k: self.k,
            seed: self.seed,
            threads: self.threads,
            order: if self.first_come {
                CombineOrder::FirstCome
            } else {
                CombineOrder::Balanced
            },
            output: self.out,
            verbose: self.verbose,
            use_cache: !self.no_cache,
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", to_pretty_json(value));
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Generate(a) => {
            let spec = SyntheticSpec {
                m: a.m,
                n: a.n,
                r: a.r,
                noise: a.noise,
                seed: a.seed,
                permutation: a.permutation,
            };
            let out = commands::generate(&spec, &a.out, a.chunk_rows)?;
            print_json(&out.report);
        }
        Command::Kron(a) => {
            let (rows, cols) = commands::kron(&a.input, &a.out, a.chunk_rows)?;
            print_json(
                &serde_json::json!({ "path": a.out.display().to_string(), "rows": rows, "cols": cols }),
            );
        }
        Command::Factorize(a) => {
            let out = commands::factorize(&a.into_config())?;
            print_json(&out.report);
        }
        Command::Sweep(a) => {
            let out = commands::sweep_cmd(&a.into_config())?;
            print!("{}", out.file.report.to_csv());
        }
        Command::Inspect { path } => print_json(&commands::inspect(&path)?),
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let err = CliError::usage("usage", e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return err.kind.code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.kind.code()
        }
    }
}
