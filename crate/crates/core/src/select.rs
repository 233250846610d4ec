//! Extreme-column selection on reduced data: SPA, greedy XRAY and Gaussian
//! projection. Ties always go to the lowest column index.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nnls::{compute_h, NnlsError};
use crate::sketch::SketchResult;
use crate::tsqr::{scale_matrix_columns, ColumnStats, TsqrError};

/// SPA stops when the largest residual column norm drops to this fraction of
/// the largest initial column norm.
pub const EXHAUSTION_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Spa,
    Xray,
    Gp,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Spa, Algorithm::Xray, Algorithm::Gp];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Spa => "spa",
            Algorithm::Xray => "xray",
            Algorithm::Gp => "gp",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spa" => Ok(Algorithm::Spa),
            "xray" => Ok(Algorithm::Xray),
            "gp" => Ok(Algorithm::Gp),
            other => Err(format!(
                "unknown algorithm {other:?} (expected spa, xray or gp)"
            )),
        }
    }
}

/// Selected columns in selection order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "ExtremeSetJson", try_from = "ExtremeSetJson")]
pub struct ExtremeSet {
    pub algorithm: Algorithm,
    pub requested: usize,
    pub indices: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ExtremeSetJson {
    algorithm: Algorithm,
    r: usize,
    indices: Vec<usize>,
    shortfall: usize,
}

impl From<ExtremeSet> for ExtremeSetJson {
    fn from(s: ExtremeSet) -> Self {
        ExtremeSetJson {
            algorithm: s.algorithm,
            r: s.requested,
            shortfall: s.shortfall(),
            indices: s.indices,
        }
    }
}

impl TryFrom<ExtremeSetJson> for ExtremeSet {
    type Error = String;

    fn try_from(j: ExtremeSetJson) -> Result<Self, String> {
        if j.indices.len() + j.shortfall != j.r {
            return Err(format!(
                "{} indices and shortfall {} do not add up to r = {}",
                j.indices.len(),
                j.shortfall,
                j.r
            ));
        }
        Ok(ExtremeSet {
            algorithm: j.algorithm,
            requested: j.r,
            indices: j.indices,
        })
    }
}

impl ExtremeSet {
    /// Requested count minus achieved count.
    pub fn shortfall(&self) -> usize {
        self.requested.saturating_sub(self.indices.len())
    }

    /// The first `r` selections, as if `r` had been requested.
    pub fn prefix(&self, r: usize) -> ExtremeSet {
        ExtremeSet {
            algorithm: self.algorithm,
            requested: r,
            indices: self.indices[..r.min(self.indices.len())].to_vec(),
        }
    }

    pub fn sorted(&self) -> Vec<usize> {
        let mut k = self.indices.clone();
        k.sort_unstable();
        k
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectError {
    #[error("rank {r} exceeds column count {n}")]
    RankTooLarge { r: usize, n: usize },
    #[error("residual vanished after {} of {} selections", .partial.indices.len(), .partial.requested)]
    Exhausted { partial: ExtremeSet },
    #[error("NNLS refit failed: {0}")]
    Refit(#[from] NnlsError),
    #[error(transparent)]
    Scaling(#[from] TsqrError),
}

impl SelectError {
    /// The selections made before the failure, if the failure was exhaustion.
    pub fn partial(&self) -> Option<&ExtremeSet> {
        match self {
            SelectError::Exhausted { partial } => Some(partial),
            _ => None,
        }
    }
}

fn check_rank(r: usize, n: usize) -> Result<(), SelectError> {
    if r > n {
        Err(SelectError::RankTooLarge { r, n })
    } else {
        Ok(())
    }
}

/// Successive projection on the columns of `m`.
///
/// With `normalize = Some(stats)` the columns are first divided by their
/// ℓ1 norms from the original data. Zero-norm columns are then an error.
pub fn spa(
    m: &DMatrix<f64>,
    r: usize,
    normalize: Option<&ColumnStats>,
) -> Result<ExtremeSet, SelectError> {
    let n = m.ncols();
    check_rank(r, n)?;
    let mut w = match normalize {
        Some(stats) => scale_matrix_columns(m, stats.l1())?,
        None => m.clone(),
    };
    let mut norms: Vec<f64> = w.column_iter().map(|c| c.norm_squared()).collect();
    let initial = norms.iter().cloned().fold(0.0, f64::max);
    let floor = EXHAUSTION_RTOL * EXHAUSTION_RTOL * initial;
    let mut chosen = vec![false; n];
    let mut set = ExtremeSet {
        algorithm: Algorithm::Spa,
        requested: r,
        indices: Vec::with_capacity(r),
    };
    for _ in 0..r {
        let mut best: Option<usize> = None;
        for j in 0..n {
            if !chosen[j] && best.is_none_or(|b| norms[j] > norms[b]) {
                best = Some(j);
            }
        }
        let j = match best {
            Some(j) if norms[j] > floor && initial > 0.0 => j,
            _ => return Err(SelectError::Exhausted { partial: set }),
        };
        chosen[j] = true;
        set.indices.push(j);

        let u = w.column(j).clone_owned();
        let uu = u.norm_squared();
        let coeffs = w.tr_mul(&u) / uu;
        w.ger(-1.0, &u, &coeffs, 1.0);
        for (jj, c) in w.column_iter().enumerate() {
            norms[jj] = c.norm_squared();
        }
    }
    Ok(set)
}

/// Greedy XRAY with a full NNLS refit after every selection.
///
/// Column `j` scores `‖Resᵀ m_j‖₂ / ‖m_j‖₂` where `Res = m − m_K H_K`; the
/// denominator uses the original column norm throughout.
pub fn xray_greedy(m: &DMatrix<f64>, r: usize) -> Result<ExtremeSet, SelectError> {
    let n = m.ncols();
    check_rank(r, n)?;
    let col_norms: Vec<f64> = m.column_iter().map(|c| c.norm()).collect();
    let mut residual = m.clone();
    let mut chosen = vec![false; n];
    let mut set = ExtremeSet {
        algorithm: Algorithm::Xray,
        requested: r,
        indices: Vec::with_capacity(r),
    };
    for _ in 0..r {
        let corr = residual.tr_mul(m);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if chosen[j] || col_norms[j] == 0.0 {
                continue;
            }
            let score = corr.column(j).norm() / col_norms[j];
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((j, score));
            }
        }
        let Some((j, _)) = best else {
            return Err(SelectError::Exhausted { partial: set });
        };
        chosen[j] = true;
        set.indices.push(j);

        let h = compute_h(m, &set.indices)?;
        residual = m - m.select_columns(set.indices.iter()) * h.h;
    }
    Ok(set)
}

/// Per-row argmin then argmax of a column-scaled sketch, skipping repeats.
///
/// Returns fewer than `r` indices when the rows run out; the shortfall is
/// visible on the result.
pub fn gp_select(sketch: &SketchResult, r: usize) -> Result<ExtremeSet, SelectError> {
    let s = &sketch.entries;
    let n = s.ncols();
    check_rank(r, n)?;
    let mut chosen = vec![false; n];
    let mut set = ExtremeSet {
        algorithm: Algorithm::Gp,
        requested: r,
        indices: Vec::with_capacity(r),
    };
    if n == 0 {
        return Ok(set);
    }
    'rows: for i in 0..s.nrows() {
        let (mut lo, mut hi) = (0, 0);
        for j in 1..n {
            let v = s[(i, j)];
            if v < s[(i, lo)] {
                lo = j;
            }
            if v > s[(i, hi)] {
                hi = j;
            }
        }
        for j in [lo, hi] {
            if set.indices.len() == r {
                break 'rows;
            }
            if !chosen[j] {
                chosen[j] = true;
                set.indices.push(j);
            }
        }
    }
    Ok(set)
}
