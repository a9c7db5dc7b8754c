//! Toeplitz products, Gram recurrences and Cholesky helpers.
//!
//! `T(x)` below is the `N x l` Toeplitz matrix of `x` delayed by one sample:
//! `T(x)[t][p] = x[t - 1 - p]`, zero for negative indices.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// `T(x) h` truncated to `n` samples.
pub fn delayed_conv(x: &[f64], h: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    delayed_conv_add(x, h, 1.0, &mut out);
    out
}

/// `out += alpha * T(x) h`.
pub fn delayed_conv_add(x: &[f64], h: &[f64], alpha: f64, out: &mut [f64]) {
    let n = out.len().min(x.len() + 1);
    for (p, &hp) in h.iter().enumerate() {
        if hp == 0.0 {
            continue;
        }
        let c = alpha * hp;
        for t in (p + 1)..n {
            out[t] += c * x[t - 1 - p];
        }
    }
}

/// `T(x)^T e` with `l` columns.
pub fn delayed_xcorr(x: &[f64], e: &[f64], l: usize) -> Vec<f64> {
    let n = x.len().min(e.len());
    (0..l)
        .map(|p| {
            let mut acc = 0.0;
            for t in (p + 1)..n {
                acc += x[t - 1 - p] * e[t];
            }
            acc
        })
        .collect()
}

/// `T(x)^T T(z)` (`l x l`) in `O(N l)`.
pub fn delayed_gram(x: &[f64], z: &[f64], l: usize) -> DMatrix<f64> {
    let n = x.len();
    assert_eq!(n, z.len(), "gram operands differ in length");
    let mut g = DMatrix::zeros(l, l);
    // First row and column: G[0][q] = sum_s x[s] z[s - q], s <= n - 2.
    for q in 0..l {
        let mut row = 0.0;
        let mut col = 0.0;
        for s in q..n.saturating_sub(1) {
            row += x[s] * z[s - q];
            col += x[s - q] * z[s];
        }
        g[(0, q)] = row;
        g[(q, 0)] = col;
    }
    // G[p+1][q+1] = G[p][q] - x[n-2-p] z[n-2-q].
    let at = |v: &[f64], k: isize| if k >= 0 { v[k as usize] } else { 0.0 };
    for p in 1..l {
        for q in 1..l {
            let prev = g[(p - 1, q - 1)];
            let k1 = n as isize - 1 - p as isize;
            let k2 = n as isize - 1 - q as isize;
            g[(p, q)] = prev - at(x, k1) * at(z, k2);
        }
    }
    g
}

/// Adds `alpha * T0(v)^T T0(v)` to `acc`, where `T0(v)` is the `N x N` lower
/// triangular Toeplitz matrix with first column `v`.
pub fn add_lower_toeplitz_gram(v: &[f64], alpha: f64, acc: &mut DMatrix<f64>) {
    let n = v.len();
    // H[p][q] = sum_{t >= max(p,q)} v[t-p] v[t-q]; H[p][q] = H[p+1][q+1] + v[n-1-p] v[n-1-q].
    for d in 0..n {
        // Walk the diagonal q = p + d from the bottom-right corner upwards.
        let mut h = 0.0;
        for p in (0..n - d).rev() {
            let q = p + d;
            h += v[n - 1 - p] * v[n - 1 - q];
            acc[(p, q)] += alpha * h;
            if d > 0 {
                acc[(q, p)] += alpha * h;
            }
        }
    }
}

/// `T0(v)^T c` for the `N x N` lower triangular Toeplitz `T0(v)`.
pub fn lower_toeplitz_xcorr(v: &[f64], c: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|p| (p..n).map(|t| v[t - p] * c[t]).sum()).collect()
}

/// Dense `N x l` Toeplitz `T(x)`, mostly for tests and oracles.
pub fn delayed_toeplitz(x: &[f64], l: usize) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, l, |t, p| if t > p { x[t - 1 - p] } else { 0.0 })
}

pub fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Cholesky of a symmetric positive definite matrix, retrying once with a
/// diagonal jitter of `1e-10 * trace / dim`.
pub fn cholesky_jitter(m: DMatrix<f64>, block: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let dim = m.nrows().max(1);
    let jitter = 1e-10 * m.trace().abs().max(f64::MIN_POSITIVE) / dim as f64;
    log::warn!("{block}: precision not positive definite, adding jitter {jitter:e}");
    let mut jittered = m.clone();
    for k in 0..m.nrows() {
        jittered[(k, k)] += jitter;
    }
    Cholesky::new(jittered).ok_or_else(|| Error::SingularPrecision {
        block: block.to_string(),
        min_eigenvalue: smallest_eigenvalue(&m),
    })
}

/// Solves `L^T x = z` for the lower factor `L`.
pub fn solve_lower_transpose(l: &DMatrix<f64>, z: &DVector<f64>) -> DVector<f64> {
    l.tr_solve_lower_triangular(z).expect("Cholesky factor has a positive diagonal")
}

/// Cholesky factor of a symmetric banded matrix, lower band stored row-wise.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    /// `band[p * (bw + 1) + k] = L[p][p - k]`.
    band: Vec<f64>,
}

impl BandedCholesky {
    /// Factors the matrix given by its lower band `a(p, k) = A[p][p - k]`,
    /// `0 <= k <= min(p, bw)`.
    pub fn factor(n: usize, bw: usize, a: impl Fn(usize, usize) -> f64, block: &str) -> Result<Self> {
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for p in 0..n {
            let kmax = p.min(bw);
            for k in (0..=kmax).rev() {
                let c = p - k;
                // L[p][c] = (A[p][c] - sum_{s < c} L[p][s] L[c][s]) / L[c][c]
                let mut acc = a(p, k);
                let s_lo = p.saturating_sub(bw).max(c.saturating_sub(bw));
                for s in s_lo..c {
                    acc -= band[p * w + (p - s)] * band[c * w + (c - s)];
                }
                if k == 0 {
                    if !(acc > 0.0) || !acc.is_finite() {
                        return Err(Error::SingularPrecision {
                            block: block.to_string(),
                            min_eigenvalue: acc,
                        });
                    }
                    band[p * w] = acc.sqrt();
                } else {
                    band[p * w + k] = acc / band[c * w];
                }
            }
        }
        Ok(BandedCholesky { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn l(&self, p: usize, c: usize) -> f64 {
        self.band[p * (self.bw + 1) + (p - c)]
    }

    /// Solves `L x = b` in place.
    pub fn solve_lower(&self, x: &mut [f64]) {
        for p in 0..self.n {
            let mut acc = x[p];
            for c in p.saturating_sub(self.bw)..p {
                acc -= self.l(p, c) * x[c];
            }
            x[p] = acc / self.l(p, p);
        }
    }

    /// Solves `L^T x = b` in place.
    pub fn solve_upper(&self, x: &mut [f64]) {
        for c in (0..self.n).rev() {
            let mut acc = x[c];
            for p in (c + 1)..(c + 1 + self.bw).min(self.n) {
                acc -= self.l(p, c) * x[p];
            }
            x[c] = acc / self.l(c, c);
        }
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, x: &mut [f64]) {
        self.solve_lower(x);
        self.solve_upper(x);
    }

    pub fn to_dense_factor(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |p, c| {
            if c <= p && p - c <= self.bw {
                self.l(p, c)
            } else {
                0.0
            }
        })
    }
}
