#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsnmf::MemorySource;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
}

pub fn signed(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

/// Nonnegative near-separable matrix `W [I H] Π` with random `Π`; returns it and the
/// planted column positions.
pub fn separable(rng: &mut ChaCha8Rng, m: usize, n: usize, r: usize) -> (DMatrix<f64>, Vec<usize>) {
    let w = uniform(rng, m, r);
    let mut h = DMatrix::zeros(r, n);
    for t in 0..r {
        h[(t, t)] = 1.0;
    }
    for c in r..n {
        let mut col: Vec<f64> = (0..r).map(|_| rng.random::<f64>()).collect();
        let s: f64 = col.iter().sum();
        col.iter_mut().for_each(|v| *v /= s);
        for t in 0..r {
            h[(t, c)] = col[t];
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let y = w * h;
    let x = DMatrix::from_fn(m, n, |i, p| y[(i, perm[p])]);
    let planted = (0..r)
        .map(|t| perm.iter().position(|&s| s == t).unwrap())
        .collect();
    (x, planted)
}

pub fn row_major(x: &DMatrix<f64>) -> Vec<f64> {
    x.transpose().as_slice().to_vec()
}

pub fn source(x: &DMatrix<f64>, chunk_rows: usize) -> MemorySource {
    MemorySource::new(x.nrows(), x.ncols(), row_major(x), chunk_rows).unwrap()
}

/// `R` of a dense QR with rows flipped to a nonnegative diagonal.
pub fn dense_r(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut r = x.clone().qr().r();
    for i in 0..r.nrows() {
        if r[(i, i)] < 0.0 {
            let flipped = -r.row(i);
            r.set_row(i, &flipped);
        }
    }
    r
}

fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    a.clone().svd(true, true).solve(b, 1e-13).unwrap()
}

/// Exhaustive NNLS: the best unconstrained least-squares fit over every
/// support pattern whose solution is nonnegative.
pub fn nnls_oracle(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let q = a.ncols();
    let b = DVector::from_column_slice(b);
    let mut best = (b.norm_squared(), vec![0.0; q]);
    for mask in 1u32..(1 << q) {
        let support: Vec<usize> = (0..q).filter(|j| mask >> j & 1 == 1).collect();
        let sub = a.select_columns(support.iter());
        let z = lstsq(&sub, &b);
        if z.iter().any(|&v| v < 0.0) {
            continue;
        }
        let obj = (&sub * &z - &b).norm_squared();
        if obj < best.0 - 1e-14 * (1.0 + best.0) {
            let mut y = vec![0.0; q];
            for (&j, &v) in support.iter().zip(z.iter()) {
                y[j] = v;
            }
            best = (obj, y);
        }
    }
    best.1
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
