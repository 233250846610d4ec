//! Small dense kernels on column-major buffers: Householder QR and one-sided Jacobi SVD.

use nalgebra::DMatrix;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Reflector zeroing `tail` beneath `x0`, returned as `(alpha, v0, beta)`
/// with `tail` rescaled in place so `v = [v0, tail]`. Works in units of the
/// largest entry, so `vᵀv` stays in range even for subnormal input.
/// `None` when `tail` is already zero.
pub(crate) fn reflector(x0: f64, tail: &mut [f64]) -> Option<(f64, f64, f64)> {
    let tmax = tail.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if tmax == 0.0 {
        return None;
    }
    let scale = tmax.max(x0.abs());
    tail.iter_mut().for_each(|v| *v /= scale);
    let x = x0 / scale;
    let tail2 = dot(tail, tail);
    let norm = (x * x + tail2).sqrt();
    let alpha = if x >= 0.0 { -norm } else { norm };
    let v0 = x - alpha;
    Some((alpha * scale, v0, 2.0 / (v0 * v0 + tail2)))
}

/// Householder QR of a column-major `rows × cols` buffer, computed in place.
///
/// After construction the upper triangle holds `R` (diagonal of either sign);
/// reflector `j` is `v = [head[j], a[j+1.., j]]` with `H_j = I − beta[j] v vᵀ`.
pub(crate) struct HouseholderQr {
    rows: usize,
    cols: usize,
    a: Vec<f64>,
    head: Vec<f64>,
    beta: Vec<f64>,
}

impl HouseholderQr {
    pub(crate) fn new(rows: usize, cols: usize, mut a: Vec<f64>) -> Self {
        debug_assert_eq!(a.len(), rows * cols);
        let steps = rows.min(cols);
        let mut head = vec![0.0; steps];
        let mut beta = vec![0.0; steps];
        for j in 0..steps {
            let (left, right) = a.split_at_mut((j + 1) * rows);
            let col = &mut left[j * rows + j..];
            let x0 = col[0];
            let Some((alpha, v0, b)) = reflector(x0, &mut col[1..]) else {
                // Already triangular in this column; identity reflector.
                continue;
            };
            head[j] = v0;
            beta[j] = b;
            col[0] = v0;
            for l in 0..cols - j - 1 {
                let target = &mut right[l * rows + j..(l + 1) * rows];
                let s = b * dot(col, target);
                axpy(-s, col, target);
            }
            col[0] = alpha;
        }
        Self {
            rows,
            cols,
            a,
            head,
            beta,
        }
    }

    /// Entry `(i, j)` of `R` for `i <= j`.
    #[inline]
    pub(crate) fn r(&self, i: usize, j: usize) -> f64 {
        self.a[j * self.rows + i]
    }

    /// Overwrites `b` (length `rows`) with `Qᵀ b`.
    pub(crate) fn apply_qt(&self, b: &mut [f64]) {
        for j in 0..self.beta.len() {
            let beta = self.beta[j];
            if beta == 0.0 {
                continue;
            }
            let tail = &self.a[j * self.rows + j + 1..(j + 1) * self.rows];
            let s = beta * (self.head[j] * b[j] + dot(tail, &b[j + 1..]));
            b[j] -= s * self.head[j];
            axpy(-s, tail, &mut b[j + 1..]);
        }
    }

    /// The `min(rows, cols) × cols` upper-trapezoidal factor, column-major,
    /// consistent with [`HouseholderQr::apply_qt`].
    pub(crate) fn r_upper(&self) -> (usize, Vec<f64>) {
        let k = self.rows.min(self.cols);
        let mut out = vec![0.0; k * self.cols];
        for j in 0..self.cols {
            for i in 0..=j.min(k - 1) {
                out[j * k + i] = self.r(i, j);
            }
        }
        (k, out)
    }

    /// Like [`HouseholderQr::r_upper`] with rows scaled so every diagonal
    /// entry is nonnegative.
    pub(crate) fn r_nonneg(&self) -> (usize, Vec<f64>) {
        let (k, mut out) = self.r_upper();
        for i in 0..k {
            if out[i * k + i] < 0.0 {
                for j in i..self.cols {
                    out[j * k + i] = -out[j * k + i];
                }
            }
        }
        (k, out)
    }
}

/// One-sided Jacobi SVD of a square matrix: returns `(sigma, v)` with
/// `sigma` nonincreasing and `a·v = u·diag(sigma)` for orthonormal `u`.
pub(crate) fn jacobi_svd(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (rows, n) = a.shape();
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let eps = f64::EPSILON;
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let cp = w.column(p);
                    let cq = w.column(q);
                    (cp.norm_squared(), cq.norm_squared(), cp.dot(&cq))
                };
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(w.as_mut_slice(), rows, p, q, c, s);
                rotate(v.as_mut_slice(), n, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigma: Vec<(f64, usize)> = (0..n).map(|j| (w.column(j).norm(), j)).collect();
    sigma.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let v_sorted = DMatrix::from_fn(n, n, |i, j| v[(i, sigma[j].1)]);
    (sigma.into_iter().map(|(s, _)| s).collect(), v_sorted)
}

fn rotate(buf: &mut [f64], rows: usize, p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = buf.split_at_mut(q * rows);
    let cp = &mut lo[p * rows..(p + 1) * rows];
    let cq = &mut hi[..rows];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Solves `min ‖a z − b‖₂` for a column-major `rows × cols` matrix of full
/// column rank via Householder QR. Returns `None` when a pivot falls below
/// `rel_tol` times its column norm.
pub(crate) fn least_squares(
    rows: usize,
    cols: usize,
    a: Vec<f64>,
    b: &[f64],
    rel_tol: f64,
) -> Option<Vec<f64>> {
    if cols > rows {
        return None;
    }
    let col_norms: Vec<f64> = a.chunks_exact(rows).map(|c| dot(c, c).sqrt()).collect();
    let qr = HouseholderQr::new(rows, cols, a);
    for (j, &cn) in col_norms.iter().enumerate() {
        if qr.r(j, j).abs() <= rel_tol * cn || cn == 0.0 {
            return None;
        }
    }
    let mut rhs = b.to_vec();
    qr.apply_qt(&mut rhs);
    let mut z = vec![0.0; cols];
    for i in (0..cols).rev() {
        let mut s = rhs[i];
        for (j, zj) in z.iter().enumerate().skip(i + 1) {
            s -= qr.r(i, j) * zj;
        }
        z[i] = s / qr.r(i, i);
    }
    Some(z)
}
