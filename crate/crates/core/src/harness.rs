//! Monte Carlo experiments: replicated simulation, every estimator variant on
//! the same data, fit metrics and CSV output.
//!
//! Output files written by [`write_outputs`]:
//!
//! - `fits.csv`: `replicate,variant,fit_imp,fit_theta,w_m_corr,converged,iterations,status,checksum`
//! - `estimates.csv`: `replicate,variant,theta_1,...,theta_p`
//! - `summary.csv`: `variant,metric,count,median,q1,q3,min,max`
//! - `reconstruction.csv`: `t,w_true,<variant>...` for the designated replicate
//! - `timings.csv`: `replicate,variant,seconds` (the only non-deterministic file)
//!
//! Undefined values are written as `NaN`. Quartiles use linear interpolation
//! between order statistics (`h = (n - 1) p`).

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{run_variant, Problem, Variant};
use crate::error::{Error, Result};
use crate::mcem::EstimatorConfig;
use crate::network::{node_set, NetworkSpec, NodeId};
use crate::regression::TargetParam;
use crate::rng;
use crate::simulate::{simulate_network, white_excitation, SignalBundle};

/// `1 - ||truth - estimate|| / ||truth - mean(truth)||`.
pub fn fit_score(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    if truth.len() != estimate.len() || truth.is_empty() {
        return Err(Error::dim(format!("fit of {} values against {}", estimate.len(), truth.len())));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let den = truth.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
    if den == 0.0 || !den.is_finite() {
        return Err(Error::Undefined("true vector is constant".into()));
    }
    let num = truth.iter().zip(estimate).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(1.0 - num / den)
}

/// `(Fit_imp, Fit_theta)`.
pub fn fit_metrics(g0: &[f64], g_hat: &[f64], theta0: &[f64], theta_hat: &[f64]) -> Result<(f64, f64)> {
    Ok((fit_score(g0, g_hat)?, fit_score(theta0, theta_hat)?))
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Network TOML file; the bundled four-node network when absent.
    #[serde(default)]
    pub network: Option<String>,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    /// Per-node noise variances replacing those of the network file.
    #[serde(default)]
    pub noise_variances: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    /// `[j, i]` of the target module.
    #[serde(default = "default_target")]
    pub target: [usize; 2],
    #[serde(default = "default_measured")]
    pub measured: Vec<usize>,
    #[serde(default = "default_missing")]
    pub missing: usize,
    /// Replicate whose reconstructed missing signal is written out.
    #[serde(default)]
    pub designated_replicate: usize,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    /// Worker threads (all cores when absent).
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}
fn default_replicates() -> usize {
    20
}
fn default_n() -> usize {
    150
}
fn default_target() -> [usize; 2] {
    [3, 1]
}
fn default_measured() -> Vec<usize> {
    vec![1, 3, 4]
}
fn default_missing() -> usize {
    2
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            network: None,
            variants: default_variants(),
            replicates: default_replicates(),
            n: default_n(),
            noise_variances: None,
            seed: 0,
            target: default_target(),
            measured: default_measured(),
            missing: default_missing(),
            designated_replicate: 0,
            estimator: EstimatorConfig::default(),
            threads: None,
        }
    }
}

impl ExperimentConfig {
    pub fn check(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::invalid("replicates must be at least 1"));
        }
        if self.variants.is_empty() {
            return Err(Error::invalid("no estimator variants requested"));
        }
        if self.designated_replicate >= self.replicates {
            return Err(Error::invalid("designated replicate out of range"));
        }
        if self.threads == Some(0) {
            return Err(Error::invalid("threads must be at least 1"));
        }
        self.estimator.check()
    }

    pub fn problem(&self) -> Problem {
        Problem {
            target: (NodeId(self.target[0]), NodeId(self.target[1])),
            measured: node_set(&self.measured),
            missing: NodeId(self.missing),
        }
    }

    /// Seed of replicate `r`; data and estimators derive their seeds from it.
    pub fn replicate_seed(&self, r: usize) -> u64 {
        rng::split_seed(self.seed, r as u64)
    }
}

pub fn parse_experiment_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::malformed(e.message().to_string()))?;
    cfg.check()?;
    Ok(cfg)
}

/// Simulated record of one replicate: white unit-variance external signals
/// and network noise from two child seeds of the replicate seed.
pub fn simulate_replicate(spec: &NetworkSpec, n: usize, replicate_seed: u64) -> Result<SignalBundle> {
    let r = white_excitation(spec.signal_count(), n, rng::split_seed(replicate_seed, 0));
    simulate_network(spec, &r, rng::split_seed(replicate_seed, 1), n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub replicate: usize,
    pub variant: Variant,
    pub fit_imp: Option<f64>,
    pub fit_theta: Option<f64>,
    pub w_m_corr: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub theta: Vec<f64>,
    pub w_m_hat: Option<Vec<f64>>,
    pub seconds: f64,
    /// `ok`, or the error message of a failed run.
    pub status: String,
    pub checksum: String,
}

impl FitRecord {
    pub fn failed(&self) -> bool {
        self.status != "ok"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: Variant,
    pub metric: String,
    pub count: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl SummaryRow {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<FitRecord>,
    pub summary: Vec<SummaryRow>,
    /// True missing signal of the designated replicate.
    pub w_m_true: Vec<f64>,
    pub n_params: usize,
}

impl ExperimentOutput {
    pub fn records_of(&self, v: Variant) -> impl Iterator<Item = &FitRecord> {
        self.records.iter().filter(move |r| r.variant == v)
    }

    pub fn summary_of(&self, v: Variant, metric: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.variant == v && s.metric == metric)
    }

    pub fn any_failed(&self) -> bool {
        self.records.iter().any(FitRecord::failed)
    }
}

fn summarize(v: Variant, metric: &str, values: impl Iterator<Item = f64>) -> SummaryRow {
    let mut xs: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    xs.sort_by(f64::total_cmp);
    SummaryRow {
        variant: v,
        metric: metric.to_string(),
        count: xs.len(),
        median: quantile(&xs, 0.5),
        q1: quantile(&xs, 0.25),
        q3: quantile(&xs, 0.75),
        min: xs.first().copied().unwrap_or(f64::NAN),
        max: xs.last().copied().unwrap_or(f64::NAN),
    }
}

/// Per-variant statistics of `fit_imp`, `fit_theta`, `w_m_corr` and each
/// `theta_k`.
pub fn summary_table(records: &[FitRecord], variants: &[Variant], n_params: usize) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &v in variants {
        let recs: Vec<&FitRecord> = records.iter().filter(|r| r.variant == v).collect();
        rows.push(summarize(v, "fit_imp", recs.iter().filter_map(|r| r.fit_imp)));
        rows.push(summarize(v, "fit_theta", recs.iter().filter_map(|r| r.fit_theta)));
        rows.push(summarize(v, "w_m_corr", recs.iter().filter_map(|r| r.w_m_corr)));
        for k in 0..n_params {
            let vals = recs.iter().filter(|r| !r.failed()).filter_map(|r| r.theta.get(k).copied());
            rows.push(summarize(v, &format!("theta_{}", k + 1), vals));
        }
    }
    rows
}

fn run_replicate(
    spec: &NetworkSpec,
    cfg: &ExperimentConfig,
    r: usize,
    g0: &[f64],
    theta0: &[f64],
) -> Result<(Vec<FitRecord>, Vec<f64>)> {
    let rseed = cfg.replicate_seed(r);
    let signals = simulate_replicate(spec, cfg.n, rseed)?;
    let checksum = signals.checksum();
    let problem = cfg.problem();
    let estimator = EstimatorConfig { seed: rng::split_seed(rseed, 2), ..cfg.estimator.clone() };
    let w_true = signals.w(problem.missing).to_vec();
    let records = cfg
        .variants
        .iter()
        .map(|&variant| {
            let start = Instant::now();
            let out = run_variant(variant, spec, &problem, &signals, &estimator);
            let seconds = start.elapsed().as_secs_f64();
            let mut rec = FitRecord {
                replicate: r,
                variant,
                fit_imp: None,
                fit_theta: None,
                w_m_corr: None,
                converged: false,
                iterations: 0,
                theta: Vec::new(),
                w_m_hat: None,
                seconds,
                status: "ok".into(),
                checksum: checksum.clone(),
            };
            match out {
                Ok(o) => {
                    rec.fit_imp = fit_score(g0, &o.g_hat).ok();
                    rec.fit_theta = fit_score(theta0, &o.theta).ok();
                    rec.w_m_corr = o.w_m_hat.as_ref().map(|w| pearson(w, &w_true));
                    rec.converged = o.converged;
                    rec.iterations = o.iterations;
                    rec.theta = o.theta;
                    rec.w_m_hat = o.w_m_hat;
                }
                Err(e) => rec.status = e.to_string(),
            }
            rec
        })
        .collect();
    Ok((records, w_true))
}

/// Runs every variant on every replicate. Replicates run in parallel; the
/// result order is `(replicate, variant)` regardless of scheduling.
pub fn run_experiment(spec: &NetworkSpec, cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.check()?;
    let spec = match &cfg.noise_variances {
        Some(v) => spec.with_noise_variances(v)?,
        None => spec.clone(),
    };
    let problem = cfg.problem();
    let tf0 = spec
        .module(problem.target.0, problem.target.1)
        .ok_or_else(|| Error::MissingModule(format!("G_{}{}", cfg.target[0], cfg.target[1])))?;
    let g0 = tf0.impulse_response(cfg.n)?;
    let theta0 = match cfg.estimator.target {
        TargetParam::Rational { .. } => cfg.estimator.target.theta_of(tf0),
        TargetParam::Fir { len } => tf0.impulse_response(len).ok(),
    }
    .ok_or_else(|| Error::invalid("true target module does not fit the target parameterization"))?;
    let work = |r: usize| run_replicate(&spec, cfg, r, &g0, &theta0);
    let results: Vec<Result<(Vec<FitRecord>, Vec<f64>)>> = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::invalid(e.to_string()))?
            .install(|| (0..cfg.replicates).into_par_iter().map(work).collect()),
        None => (0..cfg.replicates).into_par_iter().map(work).collect(),
    };
    let mut records = Vec::new();
    let mut w_m_true = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        let (recs, w) = res?;
        if r == cfg.designated_replicate {
            w_m_true = w;
        }
        records.extend(recs);
    }
    let n_params = theta0.len();
    let summary = summary_table(&records, &cfg.variants, n_params);
    Ok(ExperimentOutput { records, summary, w_m_true, n_params })
}

fn num(x: Option<f64>) -> String {
    x.map_or_else(|| "NaN".to_string(), |v| v.to_string())
}

pub fn write_fits_csv<W: Write>(out: &ExperimentOutput, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["replicate", "variant", "fit_imp", "fit_theta", "w_m_corr", "converged", "iterations", "status", "checksum"])?;
    for r in &out.records {
        wtr.write_record([
            r.replicate.to_string(),
            r.variant.to_string(),
            num(r.fit_imp),
            num(r.fit_theta),
            num(r.w_m_corr),
            r.converged.to_string(),
            r.iterations.to_string(),
            r.status.clone(),
            r.checksum.clone(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_estimates_csv<W: Write>(out: &ExperimentOutput, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["replicate".to_string(), "variant".to_string()];
    header.extend((1..=out.n_params).map(|k| format!("theta_{k}")));
    wtr.write_record(&header)?;
    for r in &out.records {
        let mut row = vec![r.replicate.to_string(), r.variant.to_string()];
        row.extend((0..out.n_params).map(|k| num(r.theta.get(k).copied())));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(out: &ExperimentOutput, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["variant", "metric", "count", "median", "q1", "q3", "min", "max"])?;
    for s in &out.summary {
        wtr.write_record([
            s.variant.to_string(),
            s.metric.clone(),
            s.count.to_string(),
            s.median.to_string(),
            s.q1.to_string(),
            s.q3.to_string(),
            s.min.to_string(),
            s.max.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_reconstruction_csv<W: Write>(out: &ExperimentOutput, designated: usize, w: W) -> Result<()> {
    let recs: Vec<&FitRecord> =
        out.records.iter().filter(|r| r.replicate == designated && r.w_m_hat.is_some()).collect();
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string(), "w_true".to_string()];
    header.extend(recs.iter().map(|r| r.variant.to_string()));
    wtr.write_record(&header)?;
    for t in 0..out.w_m_true.len() {
        let mut row = vec![(t + 1).to_string(), out.w_m_true[t].to_string()];
        row.extend(recs.iter().map(|r| r.w_m_hat.as_ref().map_or("NaN".into(), |w| w[t].to_string())));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_timings_csv<W: Write>(out: &ExperimentOutput, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["replicate", "variant", "seconds"])?;
    for r in &out.records {
        wtr.write_record([r.replicate.to_string(), r.variant.to_string(), r.seconds.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes all experiment CSV files into `dir`, creating it if needed.
pub fn write_outputs(out: &ExperimentOutput, designated: usize, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_fits_csv(out, fs::File::create(dir.join("fits.csv"))?)?;
    write_estimates_csv(out, fs::File::create(dir.join("estimates.csv"))?)?;
    write_summary_csv(out, fs::File::create(dir.join("summary.csv"))?)?;
    write_reconstruction_csv(out, designated, fs::File::create(dir.join("reconstruction.csv"))?)?;
    write_timings_csv(out, fs::File::create(dir.join("timings.csv"))?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_extremes() {
        let g0 = [1.0, -0.95, 0.35];
        assert_eq!(fit_score(&g0, &g0).unwrap(), 1.0);
        let m = (1.0 - 0.95 + 0.35) / 3.0;
        assert!(fit_score(&g0, &[m, m, m]).unwrap().abs() < 1e-15);
        assert!(matches!(fit_score(&[2.0, 2.0], &[1.0, 1.0]), Err(Error::Undefined(_))));
    }

    #[test]
    fn quartiles_interpolate() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&xs, 0.5), 2.5);
        assert_eq!(quantile(&xs, 0.25), 1.75);
        assert_eq!(quantile(&xs, 0.75), 3.25);
        assert_eq!(quantile(&[5.0], 0.25), 5.0);
    }

    #[test]
    fn config_defaults_and_rejections() {
        let cfg = parse_experiment_config("replicates = 2\nvariants = [\"DM+TO\", \"MC-EBDMA\"]\n").unwrap();
        assert_eq!(cfg.variants, vec![Variant::DmTo, Variant::McEbdma]);
        assert_eq!(cfg.n, 150);
        assert!(parse_experiment_config("replicates = 0").is_err());
        assert!(parse_experiment_config("variants = [\"XYZ\"]").is_err());
        assert!(parse_experiment_config("unknown = 1").is_err());
    }
}
