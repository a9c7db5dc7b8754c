//! Small numerical optimizers: bounded scalar search and Levenberg-Marquardt.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tf::poly_root_radius;

/// Minimizes `f` on `[lo, hi]`: a uniform grid of `grid` points, then golden
/// section inside the bracket around the best grid point. Returns `(x, f(x))`.
pub fn grid_golden(f: impl Fn(f64) -> f64, lo: f64, hi: f64, grid: usize) -> (f64, f64) {
    assert!(hi > lo && grid >= 3);
    let step = (hi - lo) / (grid - 1) as f64;
    let xs: Vec<f64> = (0..grid).map(|k| if k + 1 == grid { hi } else { lo + k as f64 * step }).collect();
    let fs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let best = (0..grid).filter(|&k| !fs[k].is_nan()).min_by(|&a, &b| fs[a].total_cmp(&fs[b])).unwrap_or(0);
    let (mut a, mut b) = (xs[best.saturating_sub(1)], xs[(best + 1).min(grid - 1)]);
    let (mut bx, mut bf) = (xs[best], fs[best]);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let tol = 1e-12 * (hi - lo).max(1.0);
    while (b - a) > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    for (x, fx) in [(c, fc), (d, fd)] {
        if fx < bf {
            bx = x;
            bf = fx;
        }
    }
    (bx, bf)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative cost decrease below which the run stops.
    pub tol: f64,
    pub damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions { max_iter: 200, tol: 1e-12, damping: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmResult {
    pub x: Vec<f64>,
    /// `||r(x)||^2`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after every accepted step (non-increasing).
    pub history: Vec<f64>,
}

/// Levenberg-Marquardt on `||r(x)||^2`. Steps rejected by `admissible`, or
/// with a non-finite residual, count as failures and raise the damping.
pub fn levenberg_marquardt(
    x0: &[f64],
    residual: impl Fn(&[f64]) -> Option<DVector<f64>>,
    jacobian: impl Fn(&[f64]) -> Option<DMatrix<f64>>,
    admissible: impl Fn(&[f64]) -> bool,
    opts: &LmOptions,
) -> Result<LmResult> {
    let mut x = x0.to_vec();
    let mut r = residual(&x).ok_or_else(|| Error::Numerical("non-finite residual at the starting point".into()))?;
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(Error::Numerical("non-finite residual at the starting point".into()));
    }
    let mut mu = opts.damping;
    let mut history = vec![cost];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let Some(jac) = jacobian(&x) else { break };
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        if grad.amax() <= 1e-300 {
            converged = true;
            break;
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += mu * jtj[(k, k)].max(1e-12);
            }
            let Some(chol) = a.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&grad));
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if admissible(&cand) {
                if let Some(rc) = residual(&cand) {
                    let cc = rc.norm_squared();
                    if cc.is_finite() && cc <= cost {
                        let rel = (cost - cc) / cost.max(1e-300);
                        x = cand;
                        r = rc;
                        cost = cc;
                        history.push(cost);
                        mu = (mu / 3.0).max(1e-12);
                        improved = true;
                        if rel < opts.tol {
                            converged = true;
                        }
                        break;
                    }
                }
            }
            mu *= 10.0;
        }
        if !improved {
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    Ok(LmResult { x, cost, iterations, converged, history })
}

/// Central-difference Jacobian of `f` at `x`.
pub fn numeric_jacobian(f: impl Fn(&[f64]) -> Option<DVector<f64>>, x: &[f64]) -> Option<DMatrix<f64>> {
    let f0 = f(x)?;
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let h = 1e-6 * x[k].abs().max(1e-2);
        xp[k] = x[k] + h;
        let fp = f(&xp)?;
        xp[k] = x[k] - h;
        let fm = f(&xp)?;
        xp[k] = x[k];
        jac.set_column(k, &((fp - fm) / (2.0 * h)));
    }
    Some(jac)
}

/// Equation-error fit of `B(q)/A(q)` (`nb` numerator taps from lag 1, `na`
/// monic denominator taps) to impulse coefficients `g[0..]` (lags 1, 2, ...).
/// Returns `[b_1..b_nb, a_1..a_na]`, with the denominator contracted until
/// stable if needed.
pub fn fit_rational_to_impulse(g: &[f64], nb: usize, na: usize) -> Vec<f64> {
    let n = g.len();
    let lag = |t: isize| -> f64 { if t >= 1 && (t as usize) <= n { g[t as usize - 1] } else { 0.0 } };
    let np = nb + na;
    if np == 0 {
        return Vec::new();
    }
    let mut phi = DMatrix::zeros(n, np);
    let mut y = DVector::zeros(n);
    for row in 0..n {
        let t = row as isize + 1;
        y[row] = lag(t);
        if (t as usize) <= nb {
            phi[(row, t as usize - 1)] = 1.0;
        }
        for k in 1..=na {
            phi[(row, nb + k - 1)] = -lag(t - k as isize);
        }
    }
    let mut a = phi.transpose() * &phi;
    for k in 0..np {
        a[(k, k)] += 1e-10;
    }
    let sol = a.cholesky().map(|c| c.solve(&(phi.transpose() * y))).unwrap_or_else(|| DVector::zeros(np));
    let mut theta: Vec<f64> = sol.iter().copied().collect();
    let mut den: Vec<f64> = std::iter::once(1.0).chain(theta[nb..].iter().copied()).collect();
    let mut shrink: f64 = 1.0;
    while poly_root_radius(&den) >= 0.99 && shrink > 1e-6 {
        shrink *= 0.9;
        for (k, d) in den.iter_mut().enumerate().skip(1) {
            *d = theta[nb + k - 1] * shrink.powi(k as i32);
        }
    }
    theta[nb..].copy_from_slice(&den[1..]);
    theta
}
