//! Dense reference computations for the Gibbs full conditionals.
//!
//! The stacked residual is re-derived here with explicit loops over the
//! layout descriptors. Conditionals are then obtained by plain Gaussian
//! conditioning in covariance form, which shares no code path with the
//! structured precision-form sampler.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use netid_core::regression::{Group, LatentLayout, Latents, Source};

/// Everything the residual depends on, held as plain vectors.
pub struct Instance {
    pub layout: LatentLayout,
    /// Node signals by index (the missing node slot holds its current value).
    pub w: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    pub sigma: DMatrix<f64>,
    /// Prior covariance per layout block.
    pub kernels: Vec<DMatrix<f64>>,
}

fn conv_sub(y: &mut [f64], x: &[f64], h: &[f64]) {
    for t in 0..y.len() {
        for (p, hp) in h.iter().enumerate() {
            if t >= p + 1 {
                y[t] -= hp * x[t - 1 - p];
            }
        }
    }
}

impl Instance {
    pub fn n(&self) -> usize {
        self.w[0].len()
    }

    /// Stacked residual `[xi_0; xi_1; ...]` for node signals `w`.
    pub fn residual(&self, w: &[Vec<f64>], latents: &Latents) -> DVector<f64> {
        let lay = &self.layout;
        let n = self.n();
        let l = lay.l;
        let (j, i) = lay.target;
        let mut y0: Vec<f64> = (0..n).map(|t| w[j.index()][t] - self.u[j.index()][t]).collect();
        conv_sub(&mut y0, &w[i.index()], &self.g);
        let mut out = Vec::with_capacity(lay.rows() * n);
        for (row, &k) in lay.outputs.iter().enumerate() {
            let mut y: Vec<f64> =
                if row == 0 { y0.clone() } else { (0..n).map(|t| w[k.index()][t] - self.u[k.index()][t]).collect() };
            for b in lay.blocks.iter().filter(|b| b.row == row) {
                let x: Vec<f64> = match b.source {
                    Source::TargetOutput => y0.clone(),
                    Source::OutputMinusExcitation(q) => (0..n).map(|t| w[q.index()][t] - self.u[q.index()][t]).collect(),
                    Source::Node(q) => w[q.index()].clone(),
                    Source::Excitation(q) => self.u[q.index()].clone(),
                };
                let h = &latents.groups[b.group as usize][b.offset..b.offset + l];
                conv_sub(&mut y, &x, h);
            }
            out.extend(y);
        }
        DVector::from_vec(out)
    }

    /// Noise covariance of the stacked residual (row-major over `(row, t)`).
    pub fn noise_cov(&self) -> DMatrix<f64> {
        let n = self.n();
        let p = self.layout.rows();
        DMatrix::from_fn(p * n, p * n, |a, b| if a % n == b % n { self.sigma[(a / n, b / n)] } else { 0.0 })
    }

    fn group_prior(&self, g: Group) -> DMatrix<f64> {
        let dim = self.layout.group_dim(g);
        let l = self.layout.l;
        let mut k = DMatrix::zeros(dim, dim);
        for (idx, b) in self.layout.blocks.iter().enumerate().filter(|(_, b)| b.group == g) {
            k.view_mut((b.offset, b.offset), (l, l)).copy_from(&self.kernels[idx]);
        }
        k
    }

    /// `(mean, covariance)` of latent group `g` given everything else.
    pub fn group_conditional(&self, g: Group, latents: &Latents) -> (DVector<f64>, DMatrix<f64>) {
        let dim = self.layout.group_dim(g);
        let mut base = latents.clone();
        base.groups[g as usize].iter_mut().for_each(|v| *v = 0.0);
        let xi0 = self.residual(&self.w, &base);
        let mut phi = DMatrix::zeros(xi0.len(), dim);
        for c in 0..dim {
            let mut unit = base.clone();
            unit.groups[g as usize][c] = 1.0;
            let col = &xi0 - self.residual(&self.w, &unit);
            phi.set_column(c, &col);
        }
        let k = self.group_prior(g);
        let s = &phi * &k * phi.transpose() + self.noise_cov();
        let s_inv = s.try_inverse().expect("invertible");
        let kpt = &k * phi.transpose();
        let mean = &kpt * &s_inv * &xi0;
        let cov = &k - &kpt * &s_inv * kpt.transpose();
        (mean, cov)
    }

    /// `(mean, covariance)` of the missing signal given the measured outputs,
    /// from the joint Gaussian of all output signals.
    pub fn missing_conditional(&self, latents: &Latents) -> (DVector<f64>, DMatrix<f64>) {
        let lay = &self.layout;
        let n = self.n();
        let m = lay.missing.expect("instance has a missing node");
        let rows = lay.rows();
        let mut zero = self.w.clone();
        for &k in &lay.outputs {
            zero[k.index()] = vec![0.0; n];
        }
        let xi0 = self.residual(&zero, latents);
        let dim = rows * n;
        let mut mat = DMatrix::zeros(dim, dim);
        for (r, &k) in lay.outputs.iter().enumerate() {
            for t in 0..n {
                let mut pert = zero.clone();
                pert[k.index()][t] = 1.0;
                let col = self.residual(&pert, latents) - &xi0;
                mat.set_column(r * n + t, &col);
            }
        }
        // xi = mat z + xi0 with unit-determinant mat, so z ~ N(-mat^{-1} xi0, mat^{-1} R mat^{-T}).
        let inv = mat.try_inverse().expect("unit triangular in time");
        let mu = -(&inv * &xi0);
        let cov = &inv * self.noise_cov() * inv.transpose();
        let m_row = lay.outputs.iter().position(|&k| k == m).unwrap();
        let obs: Vec<usize> = (0..dim).filter(|&a| a / n != m_row).collect();
        let hid: Vec<usize> = (m_row * n..(m_row + 1) * n).collect();
        let pick = |r: &[usize], c: &[usize]| DMatrix::from_fn(r.len(), c.len(), |a, b| cov[(r[a], c[b])]);
        let c_ho = pick(&hid, &obs);
        let c_oo_inv = pick(&obs, &obs).try_inverse().unwrap();
        let c_hh = pick(&hid, &hid);
        let z_o = DVector::from_iterator(
            obs.len(),
            obs.iter().map(|&a| self.w[lay.outputs[a / n].index()][a % n] - mu[a]),
        );
        let mean = DVector::from_iterator(n, hid.iter().map(|&a| mu[a])) + &c_ho * &c_oo_inv * z_o;
        let cov = c_hh - &c_ho * &c_oo_inv * c_ho.transpose();
        (mean, cov)
    }
}

/// `max |a - b| / max |b|`.
pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}
