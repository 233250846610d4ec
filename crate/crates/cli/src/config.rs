//! Run configuration shared by `factorize` and `sweep`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;
use tsnmf::matio::{Format, Separator, DEFAULT_CHUNK_ROWS};
use tsnmf::{default_sketch_rows, Algorithm, CombineOrder, SketchSpec};

use crate::error::{CliError, CliResult};

/// Which orthogonal reduction feeds selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Qr,
    Svd,
}

impl FromStr for Reduction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "qr" => Ok(Reduction::Qr),
            "svd" => Ok(Reduction::Svd),
            _ => Err(format!("unknown reduction {s:?} (expected qr or svd)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    L1,
    None,
}

impl FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "l1" => Ok(Normalization::L1),
            "none" => Ok(Normalization::None),
            _ => Err(format!("unknown normalization {s:?} (expected l1 or none)")),
        }
    }
}

/// Input encoding as given on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputFormat {
    #[default]
    Auto,
    Binary,
    Text,
    Csv,
}

impl InputFormat {
    pub fn format(self) -> Option<Format> {
        match self {
            InputFormat::Auto => None,
            InputFormat::Binary => Some(Format::Binary),
            InputFormat::Text => Some(Format::Text(Separator::Whitespace)),
            InputFormat::Csv => Some(Format::Text(Separator::Char(','))),
        }
    }
}

impl FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(InputFormat::Auto),
            "binary" | "bin" => Ok(InputFormat::Binary),
            "text" | "txt" => Ok(InputFormat::Text),
            "csv" => Ok(InputFormat::Csv),
            _ => Err(format!(
                "unknown format {s:?} (expected auto, binary, text or csv)"
            )),
        }
    }
}

/// Separation ranks to evaluate: `20`, `1..30` (inclusive), `1..=30` or `2,4,8`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankList(pub Vec<usize>);

impl RankList {
    pub fn max(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }
}

impl FromStr for RankList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad rank {t:?} in {s:?}"))
        };
        let mut out = Vec::new();
        for part in s.split(',') {
            if let Some((lo, hi)) = part.split_once("..") {
                let (lo, hi) = (parse(lo)?, parse(hi.trim_start_matches('='))?);
                if lo > hi {
                    return Err(format!("empty rank range {part:?}"));
                }
                out.extend(lo..=hi);
            } else {
                out.push(parse(part)?);
            }
        }
        if out.contains(&0) {
            return Err("ranks must be at least 1".into());
        }
        out.sort_unstable();
        out.dedup();
        if out.is_empty() {
            return Err("no ranks given".into());
        }
        Ok(RankList(out))
    }
}

impl fmt::Display for RankList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|r| r.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

/// Comma list of algorithms, first occurrence kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlgorithmList(pub Vec<Algorithm>);

impl FromStr for AlgorithmList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut out: Vec<Algorithm> = Vec::new();
        for part in s.split(',') {
            let a: Algorithm = part.parse()?;
            if !out.contains(&a) {
                out.push(a);
            }
        }
        Ok(AlgorithmList(out))
    }
}

pub fn parse_algorithms(s: &str) -> Result<Vec<Algorithm>, String> {
    s.parse::<AlgorithmList>().map(|l| l.0)
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: PathBuf,
    pub format: InputFormat,
    pub chunk_rows: usize,
    pub algorithms: Vec<Algorithm>,
    pub ranks: RankList,
    pub reduction: Reduction,
    /// Explicit `--norm`; `None` means each algorithm's default.
    pub normalization: Option<Normalization>,
    pub sketch_k: Option<usize>,
    pub seed: u64,
    pub threads: usize,
    pub order: CombineOrder,
    pub output: PathBuf,
    pub verbose: bool,
    pub use_cache: bool,
}

impl RunConfig {
    pub fn new(
        input: impl Into<PathBuf>,
        output: impl Into<PathBuf>,
        algorithms: Vec<Algorithm>,
        ranks: RankList,
    ) -> Self {
        Self {
            input: input.into(),
            format: InputFormat::Auto,
            chunk_rows: DEFAULT_CHUNK_ROWS,
            algorithms,
            ranks,
            reduction: Reduction::Qr,
            normalization: None,
            sketch_k: None,
            seed: 0,
            threads: 0,
            order: CombineOrder::Balanced,
            output: output.into(),
            verbose: false,
            use_cache: true,
        }
    }

    /// Checks that do not need the input dimensions.
    pub fn validate(&self) -> CliResult<()> {
        let usage = |m: String| Err(CliError::usage("config", m));
        if self.algorithms.is_empty() {
            return usage("at least one algorithm is required".into());
        }
        if self.chunk_rows == 0 {
            return usage("--chunk-rows must be at least 1".into());
        }
        if self.sketch_k == Some(0) {
            return usage("--k must be at least 1".into());
        }
        let gp = self.algorithms.contains(&Algorithm::Gp);
        let xray = self.algorithms.contains(&Algorithm::Xray);
        if gp && self.normalization == Some(Normalization::None) {
            return usage("gp requires l1 normalization; drop --norm none".into());
        }
        if xray && self.normalization == Some(Normalization::L1) {
            return usage("xray scores raw columns and does not take --norm l1".into());
        }
        Ok(())
    }

    /// Checks against the input width `n`.
    pub fn validate_for(&self, n: usize) -> CliResult<()> {
        if self.ranks.max() > n {
            return Err(CliError::usage(
                "config",
                format!("rank {} exceeds the input's {n} columns", self.ranks.max()),
            ));
        }
        Ok(())
    }

    /// Normalization applied to SPA.
    pub fn spa_normalization(&self) -> Normalization {
        self.normalization.unwrap_or(Normalization::L1)
    }

    /// The sketch this run needs, if any.
    pub fn sketch(&self) -> Option<SketchSpec> {
        let gp = self.algorithms.contains(&Algorithm::Gp);
        match (self.sketch_k, gp) {
            (Some(k), _) => Some(SketchSpec { k, seed: self.seed }),
            (None, true) => Some(SketchSpec {
                k: default_sketch_rows(self.ranks.max()),
                seed: self.seed,
            }),
            (None, false) => None,
        }
    }

    /// Normalization each algorithm actually uses.
    pub fn normalization_for(&self, alg: Algorithm) -> Normalization {
        match alg {
            Algorithm::Spa => self.spa_normalization(),
            Algorithm::Xray => Normalization::None,
            Algorithm::Gp => Normalization::L1,
        }
    }
}
