//! Blocked Gibbs sampler over the missing signal and the `s`, `b`, `f`
//! impulse-response latents, for fixed hyperparameters.
//!
//! Each full conditional is Gaussian. For a latent group with stacked
//! regressors `X_r` (row `r`) and residuals `e_r` that exclude the group,
//!
//! ```text
//! precision = K^{-1} + sum_{r,r'} W[r][r'] X_r^T X_r'
//! mean      = precision^{-1} sum_{r,r'} W[r][r'] X_r^T e_r'
//! ```
//!
//! with `W` the inverse of the per-sample output noise covariance. The
//! missing signal enters every residual affinely (`xi_r = c_r + A_r w_m`,
//! `A_r` banded Toeplitz), which gives a banded precision.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernel::{KernelHyper, SplineFactor};
use crate::linalg::{self, BandedCholesky};
use crate::regression::{Group, LatentLayout, Latents, Source, StackedModel};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GibbsConfig {
    /// Retained samples `M`.
    pub samples: usize,
    /// Burn-in sweeps `B`.
    pub burn_in: usize,
    /// Thinning stride `kappa`.
    pub thin: usize,
    pub seed: u64,
    /// Keep every retained draw (tests and diagnostics).
    pub keep_draws: bool,
    /// Record a trace of selected coordinates.
    pub trace: bool,
    /// Blocks held at their starting values.
    pub frozen: Vec<Block>,
}

impl GibbsConfig {
    pub fn new(samples: usize, burn_in: usize, seed: u64) -> Self {
        GibbsConfig { samples, burn_in, thin: 1, seed, keep_draws: false, trace: false, frozen: Vec::new() }
    }

    pub fn check(&self) -> Result<()> {
        if self.samples == 0 || self.thin == 0 {
            return Err(Error::invalid("Gibbs sampler needs samples >= 1 and thin >= 1"));
        }
        Ok(())
    }
}

/// Output noise covariance `blockdiag(sigma_j^2, tilde)`, where `tilde`
/// covers the additional and missing rows in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputNoise {
    pub sigma_j2: f64,
    pub tilde: DMatrix<f64>,
}

impl OutputNoise {
    pub fn rows(&self) -> usize {
        1 + self.tilde.nrows()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let p = self.rows();
        let mut c = DMatrix::zeros(p, p);
        c[(0, 0)] = self.sigma_j2;
        c.view_mut((1, 1), (p - 1, p - 1)).copy_from(&self.tilde);
        c
    }

    /// Inverse covariance. The target row stays exactly decoupled.
    pub fn precision(&self) -> Result<DMatrix<f64>> {
        if !(self.sigma_j2 > 0.0 && self.sigma_j2.is_finite()) {
            return Err(Error::invalid(format!("sigma_j^2 = {} must be positive", self.sigma_j2)));
        }
        let p = self.rows();
        let mut w = DMatrix::zeros(p, p);
        w[(0, 0)] = 1.0 / self.sigma_j2;
        if p > 1 {
            let inv = self
                .tilde
                .clone()
                .cholesky()
                .ok_or_else(|| Error::invalid("noise covariance of the additional/missing rows is not positive definite"))?
                .inverse();
            w.view_mut((1, 1), (p - 1, p - 1)).copy_from(&inv);
        }
        Ok(w)
    }
}

/// Stable spline priors for every layout block.
#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    pub factors: Vec<SplineFactor>,
}

impl Priors {
    pub fn new(layout: &LatentLayout, hypers: &[KernelHyper]) -> Result<Self> {
        if hypers.len() != layout.blocks.len() {
            return Err(Error::dim(format!("{} kernel hyperparameters for {} blocks", hypers.len(), layout.blocks.len())));
        }
        let factors = layout
            .blocks
            .iter()
            .zip(hypers)
            .map(|(b, h)| {
                SplineFactor::new(h, layout.l).map_err(|e| match e {
                    Error::SingularKernel(msg) => Error::SingularKernel(format!("{}: {msg}", b.name)),
                    other => other,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Priors { factors })
    }

    /// `K_g^{-1}` for one group.
    pub fn group_precision(&self, layout: &LatentLayout, g: Group) -> DMatrix<f64> {
        let dim = layout.group_dim(g);
        let mut p = DMatrix::zeros(dim, dim);
        for (idx, b) in layout.blocks_in(g) {
            self.factors[idx].add_precision(&mut p, b.offset);
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Missing,
    Latent(Group),
}

impl Block {
    pub fn label(self) -> &'static str {
        match self {
            Block::Missing => "w_m",
            Block::Latent(Group::S) => "s",
            Block::Latent(Group::B) => "b",
            Block::Latent(Group::F) => "f",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Block::Missing => 0,
            Block::Latent(g) => 1 + g as u64,
        }
    }
}

#[derive(Debug, Clone)]
enum Factor {
    Dense(DMatrix<f64>),
    Banded(BandedCholesky),
}

/// Gaussian full conditional, stored as mean and Cholesky factor `L` of the
/// precision (`precision = L L^T`, covariance factor `L^{-T}`).
#[derive(Debug, Clone)]
pub struct GaussianBlock {
    pub mean: DVector<f64>,
    factor: Factor,
}

impl GaussianBlock {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `mean + L^{-T} z`.
    pub fn draw_with(&self, z: &[f64]) -> DVector<f64> {
        let mut x = z.to_vec();
        match &self.factor {
            Factor::Dense(l) => {
                let v = linalg::solve_lower_transpose(l, &DVector::from_vec(x));
                x = v.as_slice().to_vec();
            }
            Factor::Banded(b) => b.solve_upper(&mut x),
        }
        DVector::from_vec(x) + &self.mean
    }

    pub fn precision_factor(&self) -> DMatrix<f64> {
        match &self.factor {
            Factor::Dense(l) => l.clone(),
            Factor::Banded(b) => b.to_dense_factor(),
        }
    }

    pub fn precision(&self) -> DMatrix<f64> {
        let l = self.precision_factor();
        &l * l.transpose()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let l = self.precision_factor();
        let n = l.nrows();
        let linv = l.solve_lower_triangular(&DMatrix::identity(n, n)).expect("positive diagonal");
        linv.transpose() * linv
    }

    /// Log density at `x`.
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let l = self.precision_factor();
        let d = x - &self.mean;
        let q = l.transpose() * d;
        let log_det_prec: f64 = l.diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        0.5 * log_det_prec - 0.5 * q.norm_squared() - 0.5 * self.dim() as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Exact full conditional of one block given everything else.
pub fn conditional(
    block: Block,
    stacked: &StackedModel,
    latents: &Latents,
    priors: &Priors,
    noise: &OutputNoise,
) -> Result<GaussianBlock> {
    let layout = stacked.layout();
    if noise.rows() != layout.rows() {
        return Err(Error::dim(format!("noise covariance has {} rows, model has {}", noise.rows(), layout.rows())));
    }
    let w = noise.precision()?;
    match block {
        Block::Missing => missing_conditional(stacked, latents, &w),
        Block::Latent(g) => group_conditional(g, stacked, latents, priors, &w),
    }
}

fn group_conditional(
    g: Group,
    stacked: &StackedModel,
    latents: &Latents,
    priors: &Priors,
    w: &DMatrix<f64>,
) -> Result<GaussianBlock> {
    let layout = stacked.layout();
    let l = layout.l;
    let dim = layout.group_dim(g);
    if dim == 0 {
        return Err(Error::invalid(format!("latent group {} is empty", g.letter())));
    }
    let blocks: Vec<(usize, usize, usize)> = layout.blocks_in(g).map(|(idx, b)| (idx, b.row, b.offset)).collect();
    let rows = layout.rows();
    let mut touched = vec![false; rows];
    for &(_, row, _) in &blocks {
        for r in 0..rows {
            touched[r] |= w[(row, r)] != 0.0;
        }
    }
    let resid: Vec<Option<Vec<f64>>> =
        (0..rows).map(|r| touched[r].then(|| stacked.row_residual(r, latents, Some(g)))).collect();

    let mut prec = priors.group_precision(layout, g);
    let mut rhs = DVector::zeros(dim);
    for (a, &(ia, ra, oa)) in blocks.iter().enumerate() {
        let xa = stacked.source(ia);
        for &(ib, rb, ob) in &blocks[a..] {
            let wab = w[(ra, rb)];
            if wab == 0.0 {
                continue;
            }
            let gram = linalg::delayed_gram(xa, stacked.source(ib), l) * wab;
            let mut view = prec.view_mut((oa, ob), (l, l));
            view += &gram;
            if ia != ib {
                let mut mirror = prec.view_mut((ob, oa), (l, l));
                mirror += gram.transpose();
            }
        }
        for (r, e) in resid.iter().enumerate() {
            let war = w[(ra, r)];
            if war == 0.0 {
                continue;
            }
            let xc = linalg::delayed_xcorr(xa, e.as_ref().expect("touched row"), l);
            for (k, v) in xc.into_iter().enumerate() {
                rhs[oa + k] += war * v;
            }
        }
    }
    let chol = linalg::cholesky_jitter(prec, Block::Latent(g).label())?;
    let mean = chol.solve(&rhs);
    Ok(GaussianBlock { mean, factor: Factor::Dense(chol.l()) })
}

fn missing_conditional(stacked: &StackedModel, latents: &Latents, w: &DMatrix<f64>) -> Result<GaussianBlock> {
    let layout = stacked.layout();
    let n = stacked.len();
    let l = layout.l;
    let rows = layout.rows();
    let (c, a) = stacked.missing_affine(latents)?;

    // kappa[al][be] = sum_{r,r'} W[r][r'] a_r[al] a_r'[be]
    let mut kappa = DMatrix::<f64>::zeros(l + 1, l + 1);
    for r in 0..rows {
        for rp in 0..rows {
            let wr = w[(r, rp)];
            if wr == 0.0 {
                continue;
            }
            for al in 0..=l {
                if a[r][al] == 0.0 {
                    continue;
                }
                for be in 0..=l {
                    kappa[(al, be)] += wr * a[r][al] * a[rp][be];
                }
            }
        }
    }
    // Lambda[p][p-k] = sum_{al=0}^{min(l-k, n-1-p)} kappa[al][al+k]
    let mut band_sums = vec![vec![0.0; l + 2]; l + 1];
    for k in 0..=l {
        for al in 0..=(l - k) {
            band_sums[k][al + 1] = band_sums[k][al] + kappa[(al, al + k)];
        }
    }
    let lambda = |p: usize, k: usize| -> f64 {
        let top = (l - k).min(n - 1 - p);
        band_sums[k][top + 1]
    };
    let factor = BandedCholesky::factor(n, l, lambda, Block::Missing.label())?;

    // rhs[p] = -sum_r sum_al a_r[al] d_r[p + al], d_r = sum_r' W[r][r'] c_r'
    let mut rhs = vec![0.0; n];
    for r in 0..rows {
        let mut d = vec![0.0; n];
        for rp in 0..rows {
            let wr = w[(r, rp)];
            if wr != 0.0 {
                for (acc, v) in d.iter_mut().zip(&c[rp]) {
                    *acc += wr * v;
                }
            }
        }
        for p in 0..n {
            let top = l.min(n - 1 - p);
            let mut acc = 0.0;
            for al in 0..=top {
                acc += a[r][al] * d[p + al];
            }
            rhs[p] -= acc;
        }
    }
    factor.solve(&mut rhs);
    Ok(GaussianBlock { mean: DVector::from_vec(rhs), factor: Factor::Banded(factor) })
}

/// Running mean and scatter of a vector-valued sample (Welford).
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: DVector<f64>,
    pub m2: DMatrix<f64>,
}

impl Moments {
    pub fn new(dim: usize) -> Self {
        Moments { count: 0, mean: DVector::zeros(dim), m2: DMatrix::zeros(dim, dim) }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let x = DVector::from_column_slice(x);
        let delta = &x - &self.mean;
        self.mean += &delta / self.count as f64;
        let delta2 = &x - &self.mean;
        self.m2.ger(1.0, &delta, &delta2, 1.0);
    }

    /// Covariance normalized by the sample count.
    pub fn covariance(&self) -> DMatrix<f64> {
        if self.count == 0 {
            return self.m2.clone();
        }
        let c = &self.m2 / self.count as f64;
        (&c + c.transpose()) * 0.5
    }
}

/// Sufficient statistics for the target-parameter update, averaged over the
/// retained samples: the target row residual is `c_i - T0(v_i) g`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaStats {
    /// `mean T0(v)^T T0(v)`, `N x N`.
    pub a_hat: DMatrix<f64>,
    /// `mean T0(v)^T c`.
    pub b_hat: DVector<f64>,
    /// `mean ||c||^2`.
    pub c_sq: f64,
    pub n: usize,
}

impl ThetaStats {
    /// Monte Carlo average of `||c - T0(v) g||^2`.
    pub fn sum_squares(&self, g: &[f64]) -> f64 {
        let g = DVector::from_column_slice(g);
        self.c_sq - 2.0 * self.b_hat.dot(&g) + g.dot(&(&self.a_hat * &g))
    }
}

/// Per-time residual statistics for the additional and missing rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStats {
    /// Mean residual per time step, `N` vectors of size `rows - 1`.
    pub mean: Vec<DVector<f64>>,
    /// Sum over `t` of the per-time scatter (unnormalized).
    pub scatter: DMatrix<f64>,
    pub count: usize,
}

impl ResidualStats {
    fn new(n: usize, dim: usize) -> Self {
        ResidualStats { mean: vec![DVector::zeros(dim); n], scatter: DMatrix::zeros(dim, dim), count: 0 }
    }

    fn push(&mut self, rows: &[Vec<f64>]) {
        self.count += 1;
        let k = self.count as f64;
        let dim = rows.len();
        let mut delta = DVector::zeros(dim);
        let mut delta2 = DVector::zeros(dim);
        for (t, mean) in self.mean.iter_mut().enumerate() {
            for r in 0..dim {
                delta[r] = rows[r][t] - mean[r];
                mean[r] += delta[r] / k;
                delta2[r] = rows[r][t] - mean[r];
            }
            self.scatter.ger(1.0, &delta, &delta2, 1.0);
        }
    }

    /// `(1/N) sum_t (mean(t) mean(t)^T + E(t))`, with `E(t)` the per-time
    /// covariance of the retained residuals.
    pub fn covariance(&self) -> DMatrix<f64> {
        let dim = self.scatter.nrows();
        let n = self.mean.len().max(1) as f64;
        let mut c = DMatrix::zeros(dim, dim);
        for m in &self.mean {
            c.ger(1.0, m, m, 1.0);
        }
        if self.count > 0 {
            c += &self.scatter / self.count as f64;
        }
        c /= n;
        (&c + c.transpose()) * 0.5
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Draws {
    pub w_m: Vec<Vec<f64>>,
    pub latents: Vec<Latents>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub retained: usize,
    /// Mean and covariance of every layout block.
    pub blocks: Vec<Moments>,
    pub w_m: Option<Moments>,
    pub theta: ThetaStats,
    pub residuals: ResidualStats,
    pub draws: Option<Draws>,
    /// One row per retained sample, see [`trace_header`].
    pub trace: Option<Vec<Vec<f64>>>,
    /// Chain state after the last sweep.
    pub last: ChainState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub latents: Latents,
    pub w_m: Option<Vec<f64>>,
}

impl SampleSet {
    pub fn w_m_mean(&self) -> Option<Vec<f64>> {
        self.w_m.as_ref().map(|m| m.mean.as_slice().to_vec())
    }
}

/// Column names of the diagnostic trace: the missing signal at mid-record
/// (if any) and the first coefficient of every block.
pub fn trace_header(layout: &LatentLayout, n: usize) -> Vec<String> {
    let mut h = Vec::new();
    if let Some(m) = layout.missing {
        h.push(format!("w{}[{}]", m.0, n / 2 + 1));
    }
    h.extend(layout.blocks.iter().map(|b| format!("{}[1]", b.name)));
    h
}

pub fn write_trace_csv<W: std::io::Write>(set: &SampleSet, layout: &LatentLayout, n: usize, out: W) -> Result<()> {
    let rows = set.trace.as_ref().ok_or_else(|| Error::invalid("sample set has no trace"))?;
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["sample".to_string()];
    header.extend(trace_header(layout, n));
    wtr.write_record(&header)?;
    for (k, row) in rows.iter().enumerate() {
        let mut rec = vec![(k + 1).to_string()];
        rec.extend(row.iter().map(f64::to_string));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

fn standard_normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Runs `B + M * kappa` sweeps in the order (w_m, s, b, f) from zero latents.
pub fn gibbs_run(stacked: &StackedModel, priors: &Priors, noise: &OutputNoise, config: &GibbsConfig) -> Result<SampleSet> {
    gibbs_run_from(stacked, priors, noise, config, None)
}

/// As [`gibbs_run`], optionally starting from given latents (and the missing
/// signal already set in `stacked`).
pub fn gibbs_run_from(
    stacked: &StackedModel,
    priors: &Priors,
    noise: &OutputNoise,
    config: &GibbsConfig,
    start: Option<&Latents>,
) -> Result<SampleSet> {
    config.check()?;
    let layout = stacked.layout().clone();
    let n = stacked.len();
    let l = layout.l;
    let mut model = stacked.clone();
    let mut latents = match start {
        Some(s) => s.clone(),
        None => {
            if layout.missing.is_some() {
                model.set_missing(&vec![0.0; n])?;
            }
            Latents::zeros(&layout)
        }
    };
    let mut order = Vec::new();
    if layout.missing.is_some() {
        order.push(Block::Missing);
    }
    order.extend(Group::ALL.into_iter().filter(|&g| layout.group_dim(g) > 0).map(Block::Latent));
    order.retain(|b| !config.frozen.contains(b));
    let mut rngs: Vec<_> = order.iter().map(|b| rng::stream(config.seed, b.stream())).collect();

    let mut blocks: Vec<Moments> = layout.blocks.iter().map(|_| Moments::new(l)).collect();
    let mut w_m_stats = layout.missing.map(|_| Moments::new(n));
    let mut theta = ThetaAccumulator::new(n);
    let mut resid = ResidualStats::new(n, layout.rows() - 1);
    let mut draws = config.keep_draws.then(Draws::default);
    let mut trace = config.trace.then(Vec::new);

    let own = layout.target_own_block();
    let wi_delayed: Vec<f64> = std::iter::once(0.0).chain(model.w_i()[..n - 1].iter().copied()).collect();

    let total = config.burn_in + config.samples * config.thin;
    for sweep in 0..total {
        for (k, &block) in order.iter().enumerate() {
            let cond = conditional(block, &model, &latents, priors, noise)
                .map_err(|e| Error::Sweep { sweep: sweep + 1, source: Box::new(e) })?;
            let z = standard_normals(&mut rngs[k], cond.dim());
            let x = cond.draw_with(&z);
            match block {
                Block::Missing => model.set_missing(x.as_slice())?,
                Block::Latent(g) => latents.groups[g as usize].copy_from_slice(x.as_slice()),
            }
        }
        let after_burn = sweep + 1 > config.burn_in;
        if !after_burn || (sweep + 1 - config.burn_in) % config.thin != 0 {
            continue;
        }
        for (idx, b) in layout.blocks.iter().enumerate() {
            blocks[idx].push(latents.block(b, l));
        }
        if let (Some(st), Some(wm)) = (w_m_stats.as_mut(), model.missing_signal()) {
            st.push(wm);
        }
        theta.push(&model, &latents, own, &wi_delayed);
        if layout.rows() > 1 {
            let rows: Vec<Vec<f64>> = (1..layout.rows()).map(|r| model.row_residual(r, &latents, None)).collect();
            resid.push(&rows);
        }
        if let Some(d) = draws.as_mut() {
            d.w_m.push(model.missing_signal().map(<[f64]>::to_vec).unwrap_or_default());
            d.latents.push(latents.clone());
        }
        if let Some(tr) = trace.as_mut() {
            let mut row = Vec::new();
            if let Some(wm) = model.missing_signal() {
                row.push(wm[n / 2]);
            }
            row.extend(layout.blocks.iter().map(|b| latents.block(b, l)[0]));
            tr.push(row);
        }
    }
    Ok(SampleSet {
        retained: config.samples,
        blocks,
        w_m: w_m_stats,
        theta: theta.finish(),
        residuals: resid,
        draws,
        trace,
        last: ChainState { w_m: model.missing_signal().map(<[f64]>::to_vec), latents },
    })
}

struct ThetaAccumulator {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c_sq: f64,
    count: usize,
}

impl ThetaAccumulator {
    fn new(n: usize) -> Self {
        ThetaAccumulator { a: DMatrix::zeros(n, n), b: DVector::zeros(n), c_sq: 0.0, count: 0 }
    }

    fn push(&mut self, model: &StackedModel, latents: &Latents, own: usize, wi_delayed: &[f64]) {
        let layout = model.layout();
        let l = layout.l;
        let n = model.len();
        let s_own = latents.block(&layout.blocks[own], l);
        let mut v = wi_delayed.to_vec();
        linalg::delayed_conv_add(wi_delayed, s_own, -1.0, &mut v);
        let raw = model.raw_output(0);
        let mut c = raw.to_vec();
        linalg::delayed_conv_add(raw, s_own, -1.0, &mut c);
        for (idx, b) in layout.blocks_of_row(0) {
            if b.source == Source::TargetOutput {
                continue;
            }
            linalg::delayed_conv_add(model.source(idx), latents.block(b, l), -1.0, &mut c);
        }
        linalg::add_lower_toeplitz_gram(&v, 1.0, &mut self.a);
        let xc = linalg::lower_toeplitz_xcorr(&v, &c);
        for k in 0..n {
            self.b[k] += xc[k];
        }
        self.c_sq += c.iter().map(|x| x * x).sum::<f64>();
        self.count += 1;
    }

    fn finish(self) -> ThetaStats {
        let k = self.count.max(1) as f64;
        let n = self.b.len();
        let a = &self.a / k;
        ThetaStats { a_hat: (&a + a.transpose()) * 0.5, b_hat: self.b / k, c_sq: self.c_sq / k, n }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs: Vec<Vec<f64>> = (0..50).map(|k| vec![(k as f64 * 0.3).sin(), (k as f64 * 0.7).cos() * 2.0 + 5.0]).collect();
        let mut m = Moments::new(2);
        for x in &xs {
            m.push(x);
        }
        let mean = [xs.iter().map(|x| x[0]).sum::<f64>() / 50.0, xs.iter().map(|x| x[1]).sum::<f64>() / 50.0];
        let mut cov = DMatrix::zeros(2, 2);
        for x in &xs {
            for a in 0..2 {
                for b in 0..2 {
                    cov[(a, b)] += (x[a] - mean[a]) * (x[b] - mean[b]) / 50.0;
                }
            }
        }
        assert!((m.covariance() - cov).amax() < 1e-12);
        assert!((m.mean[0] - mean[0]).abs() < 1e-12);
    }

    #[test]
    fn output_noise_precision_is_block_diagonal() {
        let noise = OutputNoise { sigma_j2: 0.5, tilde: DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]) };
        let w = noise.precision().unwrap();
        assert_eq!(w[(0, 0)], 2.0);
        assert_eq!(w[(0, 1)], 0.0);
        assert_eq!(w[(2, 0)], 0.0);
        let prod = noise.covariance() * &w;
        assert!((prod - DMatrix::identity(3, 3)).amax() < 1e-12);
    }
}
