//! First-order stable spline kernel `K[x][y] = lambda * beta^max(x, y)`
//! (1-based `x, y`), its LDL^T factorization and prior assembly.
//!
//! With `L[x][y] = beta^(x - y)` (unit lower) and
//! `D = lambda * diag(beta, beta^2 (1 - beta), ..., beta^l (1 - beta))`,
//! `K = L D L^T`. `L^{-1}` is bidiagonal with `-beta` below the diagonal, so
//! quadratic forms, traces and the log-determinant cost `O(l)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::regression::LatentLayout;
use crate::regression::Group;

pub const LAMBDA_FLOOR: f64 = 1e-8;
pub const BETA_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelHyper {
    pub lambda: f64,
    pub beta: f64,
    /// Scale pinned to 1 (impulse responses driven by the missing node).
    pub fixed_lambda: bool,
}

impl KernelHyper {
    pub fn new(lambda: f64, beta: f64) -> Result<Self> {
        let h = KernelHyper { lambda, beta, fixed_lambda: false };
        h.check()?;
        Ok(h)
    }

    pub fn fixed(beta: f64) -> Result<Self> {
        let h = KernelHyper { lambda: 1.0, beta, fixed_lambda: true };
        h.check()?;
        Ok(h)
    }

    pub fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid(format!("beta = {} outside [0, 1]", self.beta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda = {} must be finite and >= 0", self.lambda)));
        }
        if self.fixed_lambda && self.lambda != 1.0 {
            return Err(Error::invalid("fixed-scale kernel must have lambda = 1"));
        }
        Ok(())
    }
}

pub fn stable_spline(hyper: &KernelHyper, l: usize) -> Result<DMatrix<f64>> {
    hyper.check()?;
    Ok(DMatrix::from_fn(l, l, |x, y| hyper.lambda * hyper.beta.powi(x.max(y) as i32 + 1)))
}

/// Unit lower `L` and diagonal `D` with `L D L^T = K`.
pub fn factorize(hyper: &KernelHyper, l: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    hyper.check()?;
    if hyper.beta == 0.0 {
        return Err(Error::SingularKernel(format!("beta = 0 (l = {l})")));
    }
    let b = hyper.beta;
    let lower = DMatrix::from_fn(l, l, |x, y| if x >= y { b.powi((x - y) as i32) } else { 0.0 });
    let d = DVector::from_fn(l, |k, _| diag_entry(hyper, k));
    Ok((lower, d))
}

fn diag_entry(h: &KernelHyper, k: usize) -> f64 {
    let b = h.beta;
    if k == 0 {
        h.lambda * b
    } else {
        h.lambda * b.powi(k as i32 + 1) * (1.0 - b)
    }
}

/// Inverse-side view of one stable spline block.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineFactor {
    beta: f64,
    d: Vec<f64>,
}

impl SplineFactor {
    pub fn new(hyper: &KernelHyper, l: usize) -> Result<Self> {
        hyper.check()?;
        if hyper.beta == 0.0 || hyper.lambda == 0.0 {
            return Err(Error::SingularKernel(format!("lambda = {}, beta = {}", hyper.lambda, hyper.beta)));
        }
        let jitter = if hyper.beta < 1e-6 { 1e-10 * hyper.lambda * hyper.beta } else { 0.0 };
        let d: Vec<f64> = (0..l).map(|k| diag_entry(hyper, k) + jitter).collect();
        if let Some(k) = d.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::SingularKernel(format!("zero pivot {} at beta = {}", k + 1, hyper.beta)));
        }
        Ok(SplineFactor { beta: hyper.beta, d })
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn log_det(&self) -> f64 {
        self.d.iter().map(|v| v.ln()).sum()
    }

    /// `x^T K^{-1} x`.
    pub fn quad(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        let mut prev = 0.0;
        for (k, &xk) in x.iter().enumerate() {
            let r = xk - self.beta * prev;
            acc += r * r / self.d[k];
            prev = xk;
        }
        acc
    }

    /// `tr(K^{-1} S)` for symmetric `S`.
    pub fn trace_inv(&self, s: &DMatrix<f64>) -> f64 {
        let b = self.beta;
        (0..self.d.len())
            .map(|k| {
                let v = if k == 0 {
                    s[(0, 0)]
                } else {
                    s[(k, k)] - 2.0 * b * s[(k, k - 1)] + b * b * s[(k - 1, k - 1)]
                };
                v / self.d[k]
            })
            .sum()
    }

    /// Adds `K^{-1}` (tridiagonal) into `out` at `offset`.
    pub fn add_precision(&self, out: &mut DMatrix<f64>, offset: usize) {
        let l = self.d.len();
        let b = self.beta;
        for k in 0..l {
            let mut diag = 1.0 / self.d[k];
            if k + 1 < l {
                diag += b * b / self.d[k + 1];
                let off = -b / self.d[k + 1];
                out[(offset + k, offset + k + 1)] += off;
                out[(offset + k + 1, offset + k)] += off;
            }
            out[(offset + k, offset + k)] += diag;
        }
    }

    pub fn precision(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.d.len(), self.d.len());
        self.add_precision(&mut p, 0);
        p
    }
}

/// Block-diagonal prior covariances `(K1, K2, K3)` for the `s`, `b` and `f`
/// latents, with `hypers` listed in layout block order.
pub fn assemble_priors(
    layout: &LatentLayout,
    hypers: &[KernelHyper],
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    if hypers.len() != layout.blocks.len() {
        return Err(Error::dim(format!("{} kernel hyperparameters for {} blocks", hypers.len(), layout.blocks.len())));
    }
    let mut out = [Group::S, Group::B, Group::F].map(|g| DMatrix::zeros(layout.group_dim(g), layout.group_dim(g)));
    for (block, h) in layout.blocks.iter().zip(hypers) {
        if block.fixed_lambda != h.fixed_lambda {
            return Err(Error::invalid(format!("block {}: fixed-scale flag does not match the layout", block.name)));
        }
        let k = stable_spline(h, layout.l)?;
        let target = &mut out[block.group as usize];
        target.view_mut((block.offset, block.offset), (layout.l, layout.l)).copy_from(&k);
    }
    let [k1, k2, k3] = out;
    Ok((k1, k2, k3))
}
