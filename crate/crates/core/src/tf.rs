//! Discrete-time rational transfer functions in the delay operator.
//!
//! Polynomials are stored low-order first in `q^{-1}`: `num[k]` multiplies
//! `q^{-k}`. Denominators are monic (`den[0] == 1.0` exactly).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

impl TransferFunction {
    /// Builds a transfer function and checks that the denominator is monic.
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self> {
        let tf = TransferFunction { num, den };
        tf.check_monic("transfer function")?;
        Ok(tf)
    }

    pub fn unit() -> Self {
        TransferFunction { num: vec![1.0], den: vec![1.0] }
    }

    /// FIR filter `sum_k coeffs[k-1] q^{-k}`, strictly proper.
    pub fn fir(coeffs: &[f64]) -> Self {
        let mut num = Vec::with_capacity(coeffs.len() + 1);
        num.push(0.0);
        num.extend_from_slice(coeffs);
        TransferFunction { num, den: vec![1.0] }
    }

    pub fn check_monic(&self, what: &str) -> Result<()> {
        match self.den.first() {
            Some(&d) if d == 1.0 => {}
            Some(&d) => return Err(Error::NonMonic { what: what.to_string(), got: d }),
            None => return Err(Error::NonMonic { what: what.to_string(), got: 0.0 }),
        }
        if self.num.is_empty() {
            return Err(Error::malformed(format!("{what}: empty numerator")));
        }
        if self.num.iter().chain(&self.den).any(|c| !c.is_finite()) {
            return Err(Error::malformed(format!("{what}: non-finite coefficient")));
        }
        Ok(())
    }

    pub fn is_strictly_proper(&self) -> bool {
        self.num.first().is_none_or(|&b0| b0 == 0.0)
    }

    /// Largest pole magnitude (0 for a pure FIR).
    pub fn pole_radius(&self) -> f64 {
        poly_root_radius(&self.den)
    }

    pub fn is_stable(&self) -> bool {
        self.pole_radius() < 1.0
    }

    pub fn check_stable(&self, what: &str) -> Result<()> {
        let magnitude = self.pole_radius();
        if magnitude.is_finite() && magnitude < 1.0 {
            Ok(())
        } else {
            Err(Error::Unstable { what: what.to_string(), magnitude })
        }
    }

    /// Impulse response coefficients `g(1), ..., g(n)`.
    ///
    /// The `q^0` coefficient is skipped, which is the convention for strictly
    /// proper modules.
    pub fn impulse_response(&self, n: usize) -> Result<Vec<f64>> {
        let mut g = self.impulse_response_from_zero(n + 1)?;
        g.remove(0);
        Ok(g)
    }

    /// Impulse response coefficients `g(0), ..., g(n-1)`.
    pub fn impulse_response_from_zero(&self, n: usize) -> Result<Vec<f64>> {
        if self.den.first().is_none_or(|&d| d == 0.0) {
            return Err(Error::invalid("zero denominator leading coefficient"));
        }
        let mut impulse = vec![0.0; n];
        if n > 0 {
            impulse[0] = 1.0;
        }
        Ok(self.filter(&impulse))
    }

    /// Runs the difference equation with zero initial conditions.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let a0 = self.den[0];
        let mut y = vec![0.0; x.len()];
        for t in 0..x.len() {
            let mut acc = 0.0;
            for (k, &b) in self.num.iter().enumerate() {
                if k > t {
                    break;
                }
                acc += b * x[t - k];
            }
            for (k, &a) in self.den.iter().enumerate().skip(1) {
                if k > t {
                    break;
                }
                acc -= a * y[t - k];
            }
            y[t] = acc / a0;
        }
        y
    }

    /// Multiplicative inverse `den/num`; requires a nonzero `num[0]` (biproper).
    pub fn inverse(&self) -> Result<Self> {
        let b0 = *self.num.first().unwrap_or(&0.0);
        if b0 == 0.0 {
            return Err(Error::invalid("cannot invert a strictly proper transfer function"));
        }
        Ok(TransferFunction {
            num: self.den.iter().map(|a| a / b0).collect(),
            den: self.num.iter().map(|b| b / b0).collect(),
        })
    }
}

/// Largest root magnitude of `1 + a_1 z^{-1} + ... + a_n z^{-n}`, i.e. of
/// `z^n + a_1 z^{n-1} + ... + a_n`.
pub fn poly_root_radius(coeffs: &[f64]) -> f64 {
    let mut c: Vec<f64> = coeffs.to_vec();
    while c.len() > 1 && *c.last().unwrap() == 0.0 {
        c.pop();
    }
    let n = c.len().saturating_sub(1);
    if n == 0 {
        return 0.0;
    }
    let lead = c[0];
    let mut companion = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        companion[(0, k)] = -c[k + 1] / lead;
    }
    for k in 1..n {
        companion[(k, k - 1)] = 1.0;
    }
    companion
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Truncated convolution `(a * b)[0..n]`.
pub fn convolve_truncated(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (i, &ai) in a.iter().enumerate().take(n) {
        if ai == 0.0 {
            continue;
        }
        for (j, &bj) in b.iter().enumerate().take(n - i) {
            out[i + j] += ai * bj;
        }
    }
    out
}
