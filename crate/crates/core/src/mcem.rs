//! Monte Carlo EM for the empirical Bayes objective.
//!
//! The E-step runs the blocked Gibbs sampler at the current hyperparameters.
//! The M-step splits into independent updates: stable spline `(lambda, beta)`
//! per block, the target parameters with `sigma_j^2`, and the noise
//! covariance of the additional and missing rows.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{gibbs_run_from, Block, GibbsConfig, Moments, OutputNoise, Priors, SampleSet, ThetaStats};
use crate::kernel::{KernelHyper, SplineFactor, BETA_FLOOR, LAMBDA_FLOOR};
use crate::linalg;
use crate::network::PredictorModel;
use crate::optim::{self, LmOptions};
use crate::regression::{build_stacked_model, LatentLayout, Latents, Source, TargetParam};
use crate::rng;
use crate::simulate::SignalBundle;

const SIGMA_FLOOR: f64 = 1e-10;
const GRID: usize = 64;

/// Estimator settings, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// Impulse-response length of every latent block.
    pub l: usize,
    /// Retained Gibbs samples per E-step.
    pub samples: usize,
    pub burn_in: usize,
    /// Burn-in of the first E-step (defaults to `burn_in`).
    pub initial_burn_in: Option<usize>,
    pub thin: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    /// Add measured descendants of the missing node as extra outputs.
    pub use_additional: bool,
    /// Reuse one Gibbs seed in every EM iteration.
    pub common_random_numbers: bool,
    /// Start each E-step chain where the previous one stopped (the first
    /// starts from zero).
    pub warm_start: bool,
    pub target: TargetParam,
    /// Starting target parameters (overrides `theta_start`).
    pub theta_init: Option<Vec<f64>>,
    pub theta_start: ThetaStart,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            l: 15,
            samples: 100,
            burn_in: 2000,
            initial_burn_in: None,
            thin: 1,
            max_iters: 50,
            tol: 1e-2,
            seed: 0,
            use_additional: true,
            common_random_numbers: false,
            warm_start: true,
            target: TargetParam::Rational { nb: 2, na: 2 },
            theta_init: None,
            theta_start: ThetaStart::LeastSquares,
        }
    }
}

impl EstimatorConfig {
    pub fn check(&self) -> Result<()> {
        if self.l == 0 || self.samples == 0 || self.thin == 0 || self.max_iters == 0 {
            return Err(Error::invalid("l, samples, thin and max_iters must be positive"));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid(format!("tol = {} must be finite and >= 0", self.tol)));
        }
        self.target.check()?;
        if let Some(t) = &self.theta_init {
            if t.len() != self.target.n_params() || t.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("theta_init does not match the target parameterization"));
            }
        }
        Ok(())
    }
}

/// Default starting point of the target parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaStart {
    /// `0.01` for every numerator or FIR coefficient, zero denominator.
    Small,
    /// Least-squares FIR fit of the target output on its measured inputs,
    /// reduced to the target parameterization.
    LeastSquares,
}

pub fn parse_estimator_config(text: &str) -> Result<EstimatorConfig> {
    let cfg: EstimatorConfig = toml::from_str(text).map_err(|e| Error::malformed(e.to_string()))?;
    cfg.check()?;
    Ok(cfg)
}

/// Hyperparameters `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperState {
    pub theta: Vec<f64>,
    /// One entry per layout block.
    pub kernels: Vec<KernelHyper>,
    pub sigma_j2: f64,
    /// Noise covariance of the additional and missing rows, layout order.
    pub tilde: DMatrix<f64>,
}

impl HyperState {
    pub fn noise(&self) -> OutputNoise {
        OutputNoise { sigma_j2: self.sigma_j2.max(SIGMA_FLOOR), tilde: self.tilde.clone() }
    }

    /// Missing-row noise variance, when the model has a missing node.
    pub fn sigma_m2(&self, layout: &LatentLayout) -> Option<f64> {
        layout.missing_row().map(|r| self.tilde[(r - 1, r - 1)])
    }

    /// Canonical flattening used for the convergence test.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.theta.clone();
        for k in &self.kernels {
            if !k.fixed_lambda {
                v.push(k.lambda.max(LAMBDA_FLOOR).ln());
            }
            v.push(k.beta);
        }
        v.push(self.sigma_j2.max(SIGMA_FLOOR).ln());
        let p = self.tilde.nrows();
        for a in 0..p {
            v.push(self.tilde[(a, a)].max(SIGMA_FLOOR).ln());
            for b in 0..a {
                v.push(self.tilde[(a, b)]);
            }
        }
        v
    }

    pub fn check(&self) -> Result<()> {
        for k in &self.kernels {
            k.check()?;
            if k.lambda < LAMBDA_FLOOR || k.beta < BETA_FLOOR {
                return Err(Error::invalid("kernel hyperparameter below its floor"));
            }
        }
        if !(self.sigma_j2 > 0.0) {
            return Err(Error::invalid("sigma_j^2 must be positive"));
        }
        if self.tilde.nrows() > 0 && self.tilde.clone().cholesky().is_none() {
            return Err(Error::invalid("noise covariance of the additional/missing rows is not positive definite"));
        }
        Ok(())
    }
}

/// Bounds for the `beta` search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for BetaBounds {
    fn default() -> Self {
        BetaBounds { lo: BETA_FLOOR, hi: 1.0 - BETA_FLOOR }
    }
}

/// `s^T K_beta^{-1} s + tr(K_beta^{-1} S)` and `log det K_beta` at unit scale.
fn kernel_terms(beta: f64, mean: &[f64], cov: &DMatrix<f64>) -> Option<(f64, f64)> {
    let f = SplineFactor::new(&KernelHyper { lambda: 1.0, beta, fixed_lambda: false }, mean.len()).ok()?;
    let c = f.quad(mean) + f.trace_inv(cov);
    Some((f.log_det(), c))
}

/// Negated kernel part of the EM objective for one block,
/// `log det(lambda K_beta) + (s^T K^{-1} s + tr(K^{-1} S)) / lambda`.
pub fn kernel_objective(h: &KernelHyper, stats: &Moments) -> f64 {
    let l = stats.mean.len() as f64;
    match kernel_terms(h.beta, stats.mean.as_slice(), &stats.covariance()) {
        Some((ld, c)) => l * h.lambda.ln() + ld + c / h.lambda,
        None => f64::INFINITY,
    }
}

/// Scale maximizing the objective at fixed `beta`: `c(beta) / l`, floored.
pub fn lambda_at_beta(stats: &Moments, beta: f64) -> f64 {
    let l = stats.mean.len() as f64;
    let c = kernel_terms(beta, stats.mean.as_slice(), &stats.covariance()).map_or(0.0, |(_, c)| c);
    (c / l).max(LAMBDA_FLOOR)
}

/// `(lambda, beta)` update of a free-scale block: `beta` minimizes
/// `log det K_beta + l log c(beta)`, then `lambda = c(beta) / l`.
pub fn update_kernel_hypers(stats: &Moments, prev: &KernelHyper, bounds: BetaBounds) -> KernelHyper {
    let l = stats.mean.len() as f64;
    let cov = stats.covariance();
    let mean = stats.mean.as_slice();
    if stats.mean.amax() == 0.0 && cov.amax() == 0.0 {
        warn!("all-zero impulse-response statistics; lambda clamped to its floor");
        return KernelHyper { lambda: LAMBDA_FLOOR, beta: prev.beta, fixed_lambda: false };
    }
    let profile = |beta: f64| match kernel_terms(beta, mean, &cov) {
        Some((ld, c)) if c > 0.0 => ld + l * c.ln(),
        _ => f64::INFINITY,
    };
    let (beta, _) = optim::grid_golden(profile, bounds.lo, bounds.hi, GRID);
    let c = kernel_terms(beta, mean, &cov).map(|(_, c)| c).unwrap_or(0.0);
    let cand = KernelHyper { lambda: (c / l).max(LAMBDA_FLOOR), beta, fixed_lambda: false };
    let prev = KernelHyper { fixed_lambda: false, ..*prev };
    if kernel_objective(&cand, stats) <= kernel_objective(&prev, stats) {
        cand
    } else {
        prev
    }
}

/// `beta` update of a unit-scale block: minimizes `log det K_beta + c(beta)`.
pub fn update_beta_fixed_lambda(stats: &Moments, prev: &KernelHyper, bounds: BetaBounds) -> KernelHyper {
    let cov = stats.covariance();
    let mean = stats.mean.as_slice();
    let obj = |beta: f64| kernel_terms(beta, mean, &cov).map(|(ld, c)| ld + c).unwrap_or(f64::INFINITY);
    let (beta, fb) = optim::grid_golden(obj, bounds.lo, bounds.hi, GRID);
    if fb <= obj(prev.beta) {
        KernelHyper { lambda: 1.0, beta, fixed_lambda: true }
    } else {
        KernelHyper { lambda: 1.0, fixed_lambda: true, ..*prev }
    }
}

/// `g^T A g - 2 b^T g`, the `theta`-dependent part of the target-row loss.
pub fn theta_objective(stats: &ThetaStats, param: TargetParam, theta: &[f64]) -> f64 {
    stats.sum_squares(&param.impulse(theta, stats.n)) - stats.c_sq
}

/// Closed-form minimizer for an FIR target of length `len`.
pub fn fir_closed_form(stats: &ThetaStats, len: usize) -> Result<Vec<f64>> {
    let p = len.min(stats.n);
    let a = stats.a_hat.view((0, 0), (p, p)).into_owned();
    let b = stats.b_hat.rows(0, p).into_owned();
    let sol = match a.clone().cholesky() {
        Some(c) => c.solve(&b),
        None => {
            warn!("singular FIR normal matrix; retrying with 1e-8 regularization");
            let reg = a + DMatrix::identity(p, p) * 1e-8;
            reg.cholesky().ok_or_else(|| Error::Numerical("singular FIR normal matrix".into()))?.solve(&b)
        }
    };
    let mut theta: Vec<f64> = sol.iter().copied().collect();
    theta.resize(len, 0.0);
    Ok(theta)
}

/// Local minimizer of [`theta_objective`] for any parameterization, from the
/// given starting points. Returns the best admissible point found.
pub fn minimize_theta(stats: &ThetaStats, param: TargetParam, starts: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = stats.n;
    let chol = linalg::cholesky_jitter(stats.a_hat.clone(), "target normal matrix")?;
    let r = chol.l().transpose();
    // R^{-T} b with A = R^T R
    let rtb = chol.l().solve_lower_triangular(&stats.b_hat).ok_or_else(|| Error::Numerical("triangular solve".into()))?;
    let residual = |theta: &[f64]| {
        let g = DVector::from_vec(param.impulse(theta, n));
        let res = &r * g - &rtb;
        res.iter().all(|v| v.is_finite()).then_some(res)
    };
    let jacobian = |theta: &[f64]| {
        let j = &r * param.jacobian(theta, n);
        j.iter().all(|v| v.is_finite()).then_some(j)
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for s in starts {
        if !param.is_admissible(s) {
            continue;
        }
        let Ok(res) = optim::levenberg_marquardt(s, residual, jacobian, |t| param.is_admissible(t), &LmOptions::default())
        else {
            continue;
        };
        if best.as_ref().is_none_or(|(c, _)| res.cost < *c) {
            best = Some((res.cost, res.x));
        }
    }
    best.map(|(_, x)| x).ok_or_else(|| Error::Numerical("no admissible starting point for theta".into()))
}

/// Target parameter and `sigma_j^2` update. Never returns a point worse than
/// `theta_prev` on the frozen statistics.
pub fn update_theta_sigma(stats: &ThetaStats, param: TargetParam, theta_prev: &[f64]) -> Result<(Vec<f64>, f64)> {
    let theta = match param {
        TargetParam::Fir { len } => fir_closed_form(stats, len)?,
        TargetParam::Rational { nb, na } => {
            let mut a = stats.a_hat.clone();
            let eps = 1e-8 * a.trace() / a.nrows().max(1) as f64;
            for k in 0..a.nrows() {
                a[(k, k)] += eps.max(1e-300);
            }
            let g_ls = a.cholesky().map(|c| c.solve(&stats.b_hat)).unwrap_or_else(|| DVector::zeros(stats.n));
            let arx = optim::fit_rational_to_impulse(g_ls.as_slice(), nb, na);
            minimize_theta(stats, param, &[theta_prev.to_vec(), arx])?
        }
    };
    let theta = if theta_objective(stats, param, &theta) <= theta_objective(stats, param, theta_prev) {
        theta
    } else {
        theta_prev.to_vec()
    };
    let g = param.impulse(&theta, stats.n);
    let sigma = (stats.sum_squares(&g) / stats.n as f64).max(0.0);
    Ok((theta, sigma))
}

/// Runtime switches that are not part of the estimator config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Hold the missing signal at this value instead of sampling it; the
    /// impulse responses it drives then get free-scale kernels.
    pub clamp_missing: Option<Vec<f64>>,
    pub init: Option<HyperState>,
    pub beta_bounds: Option<BetaBounds>,
    /// Keep the per-iteration hyperparameter states.
    pub keep_history: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub eta: HyperState,
    pub theta: Vec<f64>,
    /// Impulse response of the estimated target module (length `N`).
    pub g_hat: Vec<f64>,
    /// Posterior mean of the missing signal at the last E-step.
    pub w_m_hat: Option<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Relative change of `eta` per iteration.
    pub convergence_trace: Vec<f64>,
    pub block_names: Vec<String>,
    pub history: Vec<HyperState>,
}

/// Seeded starting point: `beta ~ U[0.4, 0.9]`, `lambda ~ U[0.1, 1]`,
/// `sigma_j^2` half the output variance, diagonal `tilde` with `U[0.1, 1]`
/// entries and `theta` per [`ThetaStart`].
pub fn initial_state(
    layout: &LatentLayout,
    signals: &SignalBundle,
    config: &EstimatorConfig,
    fixed: &[bool],
) -> HyperState {
    let kernels = layout
        .blocks
        .iter()
        .zip(fixed)
        .map(|(b, &fx)| {
            let mut g = rng::stream(rng::label_seed(config.seed, &b.name), 0);
            let beta = g.random_range(0.4..0.9);
            let lambda = g.random_range(0.1..1.0);
            if fx {
                KernelHyper { lambda: 1.0, beta, fixed_lambda: true }
            } else {
                KernelHyper { lambda, beta, fixed_lambda: false }
            }
        })
        .collect();
    let (j, _) = layout.target;
    let y: Vec<f64> = signals.w(j).iter().zip(signals.u(j)).map(|(w, u)| w - u).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
    let p = layout.rows() - 1;
    let tilde = DMatrix::from_fn(p, p, |a, b| {
        if a == b {
            let k = layout.outputs[a + 1];
            rng::stream(rng::label_seed(config.seed, &format!("sigma_w{}", k.0)), 0).random_range(0.1..1.0)
        } else {
            0.0
        }
    });
    let small = || match config.target {
        TargetParam::Fir { len } => vec![0.01; len],
        TargetParam::Rational { nb, na } => {
            let mut t = vec![0.01; nb];
            t.extend(std::iter::repeat_n(0.0, na));
            t
        }
    };
    let theta = match (&config.theta_init, config.theta_start) {
        (Some(t), _) => t.clone(),
        (None, ThetaStart::Small) => small(),
        (None, ThetaStart::LeastSquares) => {
            least_squares_theta(layout, signals, config.target).filter(|t| config.target.is_admissible(t)).unwrap_or_else(small)
        }
    };
    HyperState { theta, kernels, sigma_j2: (0.5 * var).max(SIGMA_FLOOR), tilde }
}

/// FIR least squares of `w_j - u_j` on `w_i` and the measured node and
/// excitation inputs of the target row, `l` taps each; the `w_i` taps are
/// then reduced to `param`.
pub fn least_squares_theta(layout: &LatentLayout, signals: &SignalBundle, param: TargetParam) -> Option<Vec<f64>> {
    let (j, i) = layout.target;
    let l = layout.l;
    let mut sources: Vec<&[f64]> = vec![signals.w(i)];
    for (_, b) in layout.blocks_of_row(0) {
        match b.source {
            Source::Node(k) if Some(k) != layout.missing && k != i => sources.push(signals.w(k)),
            Source::Excitation(k) => sources.push(signals.u(k)),
            _ => {}
        }
    }
    let n = signals.len();
    let p = l * sources.len();
    if n <= p {
        return None;
    }
    let mut phi = DMatrix::zeros(n, p);
    for (s, x) in sources.iter().enumerate() {
        phi.columns_mut(s * l, l).copy_from(&linalg::delayed_toeplitz(x, l));
    }
    let y = DVector::from_iterator(n, signals.w(j).iter().zip(signals.u(j)).map(|(w, u)| w - u));
    let mut a = phi.transpose() * &phi;
    let ridge = 1e-8 * a.trace() / p as f64;
    for k in 0..p {
        a[(k, k)] += ridge.max(1e-300);
    }
    let coef = a.cholesky()?.solve(&(phi.transpose() * y));
    let g: Vec<f64> = coef.iter().take(l).copied().collect();
    Some(match param {
        TargetParam::Fir { len } => (0..len).map(|k| g.get(k).copied().unwrap_or(0.0)).collect(),
        TargetParam::Rational { nb, na } => optim::fit_rational_to_impulse(&g, nb, na),
    })
}

fn make_pd(c: DMatrix<f64>) -> DMatrix<f64> {
    let p = c.nrows();
    if p == 0 {
        return c;
    }
    let scale = (c.trace() / p as f64).abs().max(SIGMA_FLOOR);
    let mut out = c;
    let mut jitter = 1e-10 * scale;
    while out.clone().cholesky().is_none() {
        for k in 0..p {
            out[(k, k)] += jitter;
        }
        jitter *= 10.0;
    }
    out
}

fn rel_change(new: &[f64], old: &[f64]) -> f64 {
    let num: f64 = new.iter().zip(old).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = old.iter().map(|a| a * a).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

/// One M-step on frozen statistics.
pub fn m_step(
    set: &SampleSet,
    layout: &LatentLayout,
    param: TargetParam,
    prev: &HyperState,
    bounds: BetaBounds,
) -> Result<HyperState> {
    let kernels = layout
        .blocks
        .iter()
        .enumerate()
        .map(|(idx, _)| {
            let h = &prev.kernels[idx];
            if h.fixed_lambda {
                update_beta_fixed_lambda(&set.blocks[idx], h, bounds)
            } else {
                update_kernel_hypers(&set.blocks[idx], h, bounds)
            }
        })
        .collect();
    let (theta, sigma_j2) = update_theta_sigma(&set.theta, param, &prev.theta)?;
    let tilde = if layout.rows() > 1 { set.residuals.covariance() } else { DMatrix::zeros(0, 0) };
    Ok(HyperState { theta, kernels, sigma_j2, tilde })
}

/// Runs MCEM for one predictor model on one data record.
pub fn run_mcem(
    signals: &SignalBundle,
    model: &PredictorModel,
    config: &EstimatorConfig,
    options: &RunOptions,
) -> Result<EstimateResult> {
    config.check()?;
    let layout = LatentLayout::new(model, config.l)?;
    let param = config.target;
    let n = signals.len();
    if n <= config.l {
        return Err(Error::dim(format!("record length {n} must exceed l = {}", config.l)));
    }
    let clamped = options.clamp_missing.is_some();
    let fixed: Vec<bool> = layout.blocks.iter().map(|b| b.fixed_lambda && !clamped).collect();
    let mut eta = match &options.init {
        Some(s) => s.clone(),
        None => initial_state(&layout, signals, config, &fixed),
    };
    if eta.kernels.len() != layout.blocks.len() || eta.theta.len() != param.n_params() {
        return Err(Error::dim("initial hyperparameters do not match the model"));
    }
    let bounds = options.beta_bounds.unwrap_or_default();
    let mut stacked = build_stacked_model(model, signals, &layout, param, &eta.theta)?;
    let mut frozen = Vec::new();
    if let Some(w) = &options.clamp_missing {
        stacked.set_missing(w)?;
        frozen.push(Block::Missing);
    }
    let mut start = Latents::zeros(&layout);
    let mut start_w_m = vec![0.0; n];
    let mut trace = Vec::new();
    let mut history = Vec::new();
    let mut w_m_hat = None;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=config.max_iters {
        iterations = it;
        let seed_index = if config.common_random_numbers { 0 } else { it as u64 };
        let gcfg = GibbsConfig {
            samples: config.samples,
            burn_in: if it == 1 { config.initial_burn_in.unwrap_or(config.burn_in) } else { config.burn_in },
            thin: config.thin,
            seed: rng::split_seed(config.seed, seed_index),
            keep_draws: false,
            trace: false,
            frozen: frozen.clone(),
        };
        let priors = Priors::new(&layout, &eta.kernels)?;
        let noise = eta.noise();
        if !clamped && layout.missing.is_some() {
            stacked.set_missing(&start_w_m)?;
        }
        let set = gibbs_run_from(&stacked, &priors, &noise, &gcfg, Some(&start))?;
        w_m_hat = set.w_m_mean();
        if config.warm_start {
            start = set.last.latents.clone();
            if let (false, Some(w)) = (clamped, &set.last.w_m) {
                start_w_m = w.clone();
            }
        }
        let mut next = m_step(&set, &layout, param, &eta, bounds)?;
        next.sigma_j2 = next.sigma_j2.max(SIGMA_FLOOR);
        next.tilde = make_pd(next.tilde);
        let flat = next.flatten();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { iteration: it, detail: format!("{next:?}") });
        }
        let rel = rel_change(&flat, &eta.flatten());
        debug!("EM iteration {it}: relative change {rel:.3e}, theta {:?}", next.theta);
        trace.push(rel);
        stacked.set_theta(&next.theta)?;
        eta = next;
        if options.keep_history {
            history.push(eta.clone());
        }
        if rel < config.tol {
            converged = true;
            break;
        }
    }
    Ok(EstimateResult {
        g_hat: param.impulse(&eta.theta, n),
        theta: eta.theta.clone(),
        eta,
        w_m_hat,
        iterations,
        converged,
        convergence_trace: trace,
        block_names: layout.block_names(),
        history,
    })
}
