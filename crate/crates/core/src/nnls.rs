//! Nonnegative least squares, reduced-space coefficients `H`, residuals and
//! the separation-rank sweep.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dense::{dot, least_squares, HouseholderQr};
use crate::select::{Algorithm, ExtremeSet};

/// KKT tolerance used to certify solutions.
pub const KKT_TOL: f64 = 1e-8;
/// Cap on Lawson–Hanson major iterations.
pub const MAX_ITERATIONS: usize = 10_000;
/// Negative coefficients above this are round-off and snapped to zero.
pub const SNAP_TOL: f64 = 1e-12;

const DEPENDENCE_RTOL: f64 = 1e-11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnlsError {
    #[error("non-finite input to NNLS")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("NNLS exceeded {MAX_ITERATIONS} iterations (KKT violation {violation:e})")]
    IterationCap { best: Vec<f64>, violation: f64 },
    #[error("column {column}: {source}")]
    Column {
        column: usize,
        #[source]
        source: Box<NnlsError>,
    },
    #[error("coefficient {value:e} at ({row}, {col}) is negative beyond round-off")]
    Negative { row: usize, col: usize, value: f64 },
    #[error("reduced matrix has zero Frobenius norm")]
    ZeroNorm,
    #[error("extreme index {index} out of range for {n} columns")]
    BadIndex { index: usize, n: usize },
}

/// `min_{y ≥ 0} ‖a y − b‖₂` prepared for many right-hand sides.
///
/// `a = Q T` is factored once; every solve works on the small triangular
/// system `min ‖T y − Qᵀb‖`, which has the same minimizers and gradient.
pub struct NnlsProblem {
    p: usize,
    q: usize,
    qr: HouseholderQr,
    rt: usize,
    t: Vec<f64>,
    t_norm: f64,
}

impl NnlsProblem {
    pub fn new(a: &DMatrix<f64>) -> Result<Self, NnlsError> {
        let (p, q) = a.shape();
        if p == 0 || q == 0 {
            return Err(NnlsError::Shape(format!("design is {p}x{q}")));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(NnlsError::NonFinite);
        }
        let qr = HouseholderQr::new(p, q, a.as_slice().to_vec());
        let (rt, t) = qr.r_upper();
        let t_norm = dot(&t, &t).sqrt();
        Ok(Self {
            p,
            q,
            qr,
            rt,
            t,
            t_norm,
        })
    }

    pub fn cols(&self) -> usize {
        self.q
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, NnlsError> {
        if b.len() != self.p {
            return Err(NnlsError::Shape(format!(
                "right-hand side has {} entries, design has {} rows",
                b.len(),
                self.p
            )));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(NnlsError::NonFinite);
        }
        let mut c = b.to_vec();
        self.qr.apply_qt(&mut c);
        c.truncate(self.rt);
        self.lawson_hanson(&c)
    }

    fn column(&self, j: usize) -> &[f64] {
        &self.t[j * self.rt..(j + 1) * self.rt]
    }

    /// `w = Tᵀ (c − T x)`.
    fn dual(&self, c: &[f64], x: &[f64]) -> Vec<f64> {
        let mut resid = c.to_vec();
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (r, t) in resid.iter_mut().zip(self.column(j)) {
                    *r -= xj * t;
                }
            }
        }
        (0..self.q).map(|j| dot(self.column(j), &resid)).collect()
    }

    fn passive_solve(&self, set: &[usize], c: &[f64]) -> Option<Vec<f64>> {
        let mut a = Vec::with_capacity(self.rt * set.len());
        for &j in set {
            a.extend_from_slice(self.column(j));
        }
        least_squares(self.rt, set.len(), a, c, DEPENDENCE_RTOL)
    }

    fn lawson_hanson(&self, c: &[f64]) -> Result<Vec<f64>, NnlsError> {
        let q = self.q;
        let c_norm = dot(c, c).sqrt();
        let wtol = 16.0 * f64::EPSILON * self.t_norm * c_norm * (self.rt.max(q) as f64);
        let mut x = vec![0.0; q];
        let mut passive = vec![false; q];
        let mut iterations = 0usize;

        loop {
            let w = self.dual(c, &x);
            let mut rejected = vec![false; q];
            let (entering, mut z) = loop {
                let mut best: Option<usize> = None;
                for j in 0..q {
                    if passive[j] || rejected[j] || w[j] <= wtol {
                        continue;
                    }
                    if best.is_none_or(|b| w[j] > w[b]) {
                        best = Some(j);
                    }
                }
                let Some(j) = best else {
                    return Ok(x);
                };
                let set: Vec<usize> = (0..q).filter(|&i| passive[i] || i == j).collect();
                match self.passive_solve(&set, c) {
                    Some(sol) if sol[set.iter().position(|&i| i == j).unwrap()] > 0.0 => {
                        let mut z = vec![0.0; q];
                        for (&i, v) in set.iter().zip(sol) {
                            z[i] = v;
                        }
                        break (j, z);
                    }
                    _ => rejected[j] = true,
                }
            };
            passive[entering] = true;

            loop {
                iterations += 1;
                if iterations > MAX_ITERATIONS {
                    let w = self.dual(c, &x);
                    let violation = w.iter().cloned().fold(0.0, f64::max);
                    return Err(NnlsError::IterationCap { best: x, violation });
                }
                let infeasible: Vec<usize> =
                    (0..q).filter(|&i| passive[i] && z[i] <= 0.0).collect();
                if infeasible.is_empty() {
                    x = z;
                    break;
                }
                let (mut alpha, mut blocking) = (f64::INFINITY, infeasible[0]);
                for &i in &infeasible {
                    let step = x[i] / (x[i] - z[i]);
                    if step < alpha {
                        alpha = step;
                        blocking = i;
                    }
                }
                for i in 0..q {
                    if passive[i] {
                        x[i] += alpha * (z[i] - x[i]);
                    }
                }
                x[blocking] = 0.0;
                for i in 0..q {
                    if passive[i] && x[i] <= 0.0 {
                        passive[i] = false;
                        x[i] = 0.0;
                    }
                }
                let set: Vec<usize> = (0..q).filter(|&i| passive[i]).collect();
                if set.is_empty() {
                    break;
                }
                match self.passive_solve(&set, c) {
                    Some(sol) => {
                        z = vec![0.0; q];
                        for (&i, v) in set.iter().zip(sol) {
                            z[i] = v;
                        }
                    }
                    // A subset of an independent set stays independent; keep x.
                    None => break,
                }
            }
        }
    }
}

/// Solves one NNLS problem.
pub fn nnls_solve(a: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>, NnlsError> {
    NnlsProblem::new(a)?.solve(b)
}

/// KKT residuals of a candidate `y` for `min_{y ≥ 0} ‖a y − b‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `min(0, min_j y_j)`.
    pub min_y: f64,
    /// `min_j g_j` with `g = aᵀ(a y − b)`.
    pub min_gradient: f64,
    /// `|yᵀ g|`.
    pub complementarity: f64,
    /// `‖b‖₂²`.
    pub b_norm2: f64,
}

impl KktReport {
    /// `y ≥ 0`, `g ≥ −τ` and `|yᵀg| ≤ τ ‖b‖²`.
    pub fn passes(&self, tau: f64) -> bool {
        self.min_y >= 0.0 && self.min_gradient >= -tau && self.complementarity <= tau * self.b_norm2
    }
}

pub fn kkt_report(a: &DMatrix<f64>, b: &[f64], y: &[f64]) -> KktReport {
    let resid =
        a * nalgebra::DVector::from_column_slice(y) - nalgebra::DVector::from_column_slice(b);
    let g = a.tr_mul(&resid);
    KktReport {
        min_y: y.iter().cloned().fold(0.0, f64::min),
        min_gradient: g.iter().cloned().fold(f64::INFINITY, f64::min),
        complementarity: dot(y, g.as_slice()).abs(),
        b_norm2: dot(b, b),
    }
}

/// `H ≥ 0` with rows ordered like the extreme set it was fitted against.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    pub h: DMatrix<f64>,
    pub extreme_indices: Vec<usize>,
}

fn columns(m: &DMatrix<f64>, idx: &[usize]) -> Result<DMatrix<f64>, NnlsError> {
    let n = m.ncols();
    if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
        return Err(NnlsError::BadIndex { index: bad, n });
    }
    Ok(m.select_columns(idx.iter()))
}

/// `H(:, i) = argmin_{y ≥ 0} ‖M(:, K) y − M(:, i)‖₂` for every column `i`.
pub fn compute_h(
    reduced: &DMatrix<f64>,
    indices: &[usize],
) -> Result<CoefficientMatrix, NnlsError> {
    let n = reduced.ncols();
    if indices.is_empty() {
        return Ok(CoefficientMatrix {
            h: DMatrix::zeros(0, n),
            extreme_indices: Vec::new(),
        });
    }
    let problem = NnlsProblem::new(&columns(reduced, indices)?)?;
    let solved: Vec<Result<Vec<f64>, NnlsError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            problem
                .solve(reduced.column(i).as_slice())
                .map_err(|e| NnlsError::Column {
                    column: i,
                    source: Box::new(e),
                })
        })
        .collect();
    let mut h = DMatrix::zeros(indices.len(), n);
    for (i, col) in solved.into_iter().enumerate() {
        for (t, v) in col?.into_iter().enumerate() {
            h[(t, i)] = snap(v, t, i)?;
        }
    }
    Ok(CoefficientMatrix {
        h,
        extreme_indices: indices.to_vec(),
    })
}

fn snap(v: f64, row: usize, col: usize) -> Result<f64, NnlsError> {
    if v >= 0.0 {
        Ok(v)
    } else if v > -SNAP_TOL {
        Ok(0.0)
    } else {
        Err(NnlsError::Negative { row, col, value: v })
    }
}

/// `‖M − M(:, K) H‖_F² / ‖M‖_F²`.
pub fn relative_residual(
    reduced: &DMatrix<f64>,
    indices: &[usize],
    h: &DMatrix<f64>,
) -> Result<f64, NnlsError> {
    let total = reduced.norm_squared();
    if total == 0.0 {
        return Err(NnlsError::ZeroNorm);
    }
    if h.shape() != (indices.len(), reduced.ncols()) {
        return Err(NnlsError::Shape(format!(
            "H is {:?}, expected {:?}",
            h.shape(),
            (indices.len(), reduced.ncols())
        )));
    }
    if indices.is_empty() {
        return Ok(1.0);
    }
    let fit = columns(reduced, indices)? * h;
    Ok((reduced - fit).norm_squared() / total)
}

/// Reduced data a sweep runs against. Selection inputs are prepared by the
/// caller; `h_basis` is the unnormalized reduced matrix used for `H` and residuals.
pub struct SweepInputs<'a> {
    pub h_basis: &'a DMatrix<f64>,
    /// Selects up to `r_max` columns for an algorithm; must be nested in `r`.
    pub select: &'a (dyn Fn(Algorithm, usize) -> Result<ExtremeSet, String> + Sync),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub r: usize,
    pub algorithm: Algorithm,
    pub relative_residual: Option<f64>,
    pub indices: Vec<usize>,
    pub shortfall: usize,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SweepReport {
    pub records: Vec<SweepRecord>,
}

impl SweepReport {
    pub fn curve(&self, algorithm: Algorithm) -> Vec<(usize, Option<f64>)> {
        self.records
            .iter()
            .filter(|r| r.algorithm == algorithm)
            .map(|r| (r.r, r.relative_residual))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,algorithm,residual,seconds\n");
        for rec in &self.records {
            let residual = rec
                .relative_residual
                .map(|v| format!("{v:e}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{:.6}\n",
                rec.r, rec.algorithm, residual, rec.seconds
            ));
        }
        out
    }
}

/// Residual curve over `r_values` for each algorithm, entirely on reduced data.
///
/// Every selection routine here is greedy and deterministic, so the set for
/// `r` is the length-`r` prefix of the set for `max(r_values)`; selection runs
/// once per algorithm. Cell failures are recorded, not propagated.
pub fn sweep(
    inputs: &SweepInputs<'_>,
    algorithms: &[Algorithm],
    r_values: &[usize],
) -> SweepReport {
    let n = inputs.h_basis.ncols();
    let r_max = r_values.iter().copied().max().unwrap_or(0);
    let mut records = Vec::new();
    for &alg in algorithms {
        let full = if r_max > n {
            Err(format!("r = {r_max} exceeds n = {n}"))
        } else {
            (inputs.select)(alg, r_max)
        };
        for &r in r_values {
            let start = Instant::now();
            let record = match &full {
                Err(e) => SweepRecord {
                    r,
                    algorithm: alg,
                    relative_residual: None,
                    indices: Vec::new(),
                    shortfall: r,
                    seconds: 0.0,
                    error: Some(e.clone()),
                },
                Ok(set) => {
                    let k = set.prefix(r);
                    let fitted = compute_h(inputs.h_basis, &k.indices)
                        .and_then(|h| relative_residual(inputs.h_basis, &k.indices, &h.h));
                    let (relative_residual, error) = match fitted {
                        Ok(v) => (Some(v), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    SweepRecord {
                        r,
                        algorithm: alg,
                        relative_residual,
                        shortfall: k.shortfall(),
                        indices: k.indices,
                        seconds: start.elapsed().as_secs_f64(),
                        error,
                    }
                }
            };
            records.push(record);
        }
    }
    SweepReport { records }
}
