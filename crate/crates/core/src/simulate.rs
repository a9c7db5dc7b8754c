//! Network simulation, closed-loop stability and signal CSV I/O.
//!
//! Signal CSV layout: header `t,w_1,...,w_L,r_1,...,r_K`, one row per sample,
//! `t` running from 1 to N. Values use the shortest round-trip decimal form.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::{NetworkSpec, NodeId};
use crate::rng;
use crate::tf::TransferFunction;

/// `N`-sample record of every node signal of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBundle {
    /// Node signals, one row per node.
    pub w: Vec<Vec<f64>>,
    /// Processed excitations `u_j = sum_k R_jk r_k`, one row per node.
    pub u: Vec<Vec<f64>>,
    /// External signals, one row per signal.
    pub r: Vec<Vec<f64>>,
    /// White noises `e_j`, kept when the bundle was simulated.
    pub e: Option<Vec<Vec<f64>>>,
    pub seed: Option<u64>,
}

impl SignalBundle {
    /// Bundle from measured node signals and external signals.
    pub fn from_measurements(spec: &NetworkSpec, w: Vec<Vec<f64>>, r: Vec<Vec<f64>>) -> Result<Self> {
        if w.len() != spec.node_count() {
            return Err(Error::dim(format!("{} node rows for {} nodes", w.len(), spec.node_count())));
        }
        let n = w.first().map_or(0, Vec::len);
        check_rows(&w, n, "w")?;
        check_external(spec, &r, n)?;
        let u = processed_excitation(spec, &r, n);
        Ok(SignalBundle { w, u, r, e: None, seed: None })
    }

    pub fn len(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node_count(&self) -> usize {
        self.w.len()
    }

    pub fn w(&self, node: NodeId) -> &[f64] {
        &self.w[node.index()]
    }

    pub fn u(&self, node: NodeId) -> &[f64] {
        &self.u[node.index()]
    }

    /// SHA-256 over the bit patterns of `w` and `r`, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for row in self.w.iter().chain(&self.r) {
            h.update((row.len() as u64).to_le_bytes());
            for v in row {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.w.len()).map(|k| format!("w_{k}")));
        header.extend((1..=self.r.len()).map(|k| format!("r_{k}")));
        wtr.write_record(&header)?;
        for t in 0..self.len() {
            let mut rec = vec![(t + 1).to_string()];
            rec.extend(self.w.iter().chain(&self.r).map(|row| row[t].to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Raw contents of a signal CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTable {
    pub w: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

pub fn read_signals_csv<R: Read>(input: R) -> Result<SignalTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers()?.clone();
    let mut n_w = 0;
    let mut n_r = 0;
    for (pos, name) in header.iter().enumerate() {
        let expected_w = format!("w_{}", n_w + 1);
        let expected_r = format!("r_{}", n_r + 1);
        match (pos, name) {
            (0, "t") => {}
            (0, other) => return Err(Error::malformed(format!("first column must be t, got {other:?}"))),
            (_, name) if n_r == 0 && name == expected_w => n_w += 1,
            (_, name) if name == expected_r => n_r += 1,
            (_, name) => return Err(Error::malformed(format!("unexpected column {name:?}"))),
        }
    }
    if n_w == 0 {
        return Err(Error::malformed("no node columns"));
    }
    let mut w = vec![Vec::new(); n_w];
    let mut r = vec![Vec::new(); n_r];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 1 + n_w + n_r {
            return Err(Error::malformed(format!("row {} has {} fields", row + 1, rec.len())));
        }
        let t: usize = rec[0].trim().parse().map_err(|_| Error::malformed(format!("row {}: bad t", row + 1)))?;
        if t != row + 1 {
            return Err(Error::malformed(format!("row {}: t = {t}, expected {}", row + 1, row + 1)));
        }
        for (k, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::malformed(format!("row {}: bad value {field:?}", row + 1)))?;
            if !v.is_finite() {
                return Err(Error::malformed(format!("row {}: non-finite value", row + 1)));
            }
            if k < n_w {
                w[k].push(v);
            } else {
                r[k - n_w].push(v);
            }
        }
    }
    Ok(SignalTable { w, r })
}

/// Truncated impulse response `g(1), ..., g(n)` of a strictly proper filter.
pub fn impulse_response(tf: &TransferFunction, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("impulse response length must be positive"));
    }
    tf.impulse_response(n)
}

/// Unit-variance Gaussian white external signals, one stream per signal.
pub fn white_excitation(count: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|k| {
            let mut g = rng::stream(seed, k as u64);
            (0..n).map(|_| StandardNormal.sample(&mut g)).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimulationOptions {
    /// Leading samples simulated and then dropped; `r` must cover them.
    pub warmup: usize,
}

/// Simulates `n` samples with zero initial conditions.
pub fn simulate_network(spec: &NetworkSpec, r: &[Vec<f64>], seed: u64, n: usize) -> Result<SignalBundle> {
    simulate_network_with(spec, r, seed, n, SimulationOptions::default())
}

pub fn simulate_network_with(
    spec: &NetworkSpec,
    r: &[Vec<f64>],
    seed: u64,
    n: usize,
    opts: SimulationOptions,
) -> Result<SignalBundle> {
    if !check_wellposed_stable(spec) {
        return Err(Error::Unstable { what: "closed loop (I - G)^{-1}".into(), magnitude: closed_loop_radius(spec) });
    }
    let total = n + opts.warmup;
    check_external(spec, r, total)?;
    let nodes = spec.node_count();

    let e: Vec<Vec<f64>> = (0..nodes)
        .map(|k| {
            let sd = spec.noise_variance(NodeId(k + 1)).sqrt();
            let mut g = rng::stream(seed, k as u64);
            (0..total).map(|_| sd * Distribution::<f64>::sample(&StandardNormal, &mut g)).collect::<Vec<f64>>()
        })
        .collect();
    let v: Vec<Vec<f64>> = (0..nodes)
        .map(|k| match spec.noise(NodeId(k + 1)) {
            Some(noise) => noise.filter.filter(&e[k]),
            None => e[k].clone(),
        })
        .collect();
    let u = processed_excitation(spec, r, total);

    let modules: Vec<((NodeId, NodeId), &TransferFunction)> = spec.modules().collect();
    let mut y = vec![vec![0.0; total]; modules.len()];
    let mut w = vec![vec![0.0; total]; nodes];
    for t in 0..total {
        for (m, &((to, from), tf)) in modules.iter().enumerate() {
            let x = &w[from.index()];
            let mut acc = 0.0;
            for (k, &b) in tf.num.iter().enumerate().skip(1).take(t) {
                acc += b * x[t - k];
            }
            for (k, &a) in tf.den.iter().enumerate().skip(1).take(t) {
                acc -= a * y[m][t - k];
            }
            y[m][t] = acc;
            w[to.index()][t] += acc;
        }
        for k in 0..nodes {
            w[k][t] += u[k][t] + v[k][t];
        }
    }

    let drop = |rows: Vec<Vec<f64>>| -> Vec<Vec<f64>> { rows.into_iter().map(|row| row[opts.warmup..].to_vec()).collect() };
    Ok(SignalBundle {
        w: drop(w),
        u: drop(u),
        r: r.iter().map(|row| row[opts.warmup..total].to_vec()).collect(),
        e: Some(drop(e)),
        seed: Some(seed),
    })
}

fn check_rows(rows: &[Vec<f64>], n: usize, what: &str) -> Result<()> {
    match rows.iter().position(|row| row.len() != n) {
        Some(k) => Err(Error::dim(format!("{what} row {} has length {}, expected {n}", k + 1, rows[k].len()))),
        None => Ok(()),
    }
}

fn check_external(spec: &NetworkSpec, r: &[Vec<f64>], n: usize) -> Result<()> {
    if r.len() != spec.signal_count() {
        return Err(Error::dim(format!("{} external signals, network uses {}", r.len(), spec.signal_count())));
    }
    if let Some(k) = r.iter().position(|row| row.len() < n) {
        return Err(Error::dim(format!("external signal {} has length {}, need {n}", k + 1, r[k].len())));
    }
    Ok(())
}

fn processed_excitation(spec: &NetworkSpec, r: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let mut u = vec![vec![0.0; n]; spec.node_count()];
    for ((node, signal), tf) in spec.excitations() {
        let filtered = tf.filter(&r[signal - 1][..n]);
        for (acc, x) in u[node.index()].iter_mut().zip(filtered) {
            *acc += x;
        }
    }
    u
}

/// State matrix of the interconnection, built from a controllable canonical
/// realization of every module with `w = M x` closing the loop.
fn closed_loop_matrix(spec: &NetworkSpec) -> DMatrix<f64> {
    let modules: Vec<((NodeId, NodeId), &TransferFunction)> = spec.modules().collect();
    let orders: Vec<usize> = modules.iter().map(|(_, tf)| (tf.num.len().max(tf.den.len())).saturating_sub(1)).collect();
    let offsets: Vec<usize> = orders
        .iter()
        .scan(0, |acc, &o| {
            let start = *acc;
            *acc += o;
            Some(start)
        })
        .collect();
    let dim: usize = orders.iter().sum();
    let mut a = DMatrix::zeros(dim, dim);
    // c[node] = row vector with w_node = c[node] x (excitation and noise aside).
    let mut c = DMatrix::<f64>::zeros(spec.node_count(), dim);
    for (m, ((to, _), tf)) in modules.iter().enumerate() {
        let (o, n) = (offsets[m], orders[m]);
        for k in 0..n {
            a[(o, o + k)] = -tf.den.get(k + 1).copied().unwrap_or(0.0);
            c[(to.index(), o + k)] += tf.num.get(k + 1).copied().unwrap_or(0.0);
            if k > 0 {
                a[(o + k, o + k - 1)] = 1.0;
            }
        }
    }
    // The first state of each module is driven by its input node signal.
    for (m, ((_, from), _)) in modules.iter().enumerate() {
        if orders[m] == 0 {
            continue;
        }
        let row = offsets[m];
        for col in 0..dim {
            a[(row, col)] += c[(from.index(), col)];
        }
    }
    a
}

/// Largest closed-loop pole magnitude (0 for a network without dynamics).
pub fn closed_loop_radius(spec: &NetworkSpec) -> f64 {
    let a = closed_loop_matrix(spec);
    if a.nrows() == 0 {
        return 0.0;
    }
    if a.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Whether `(I - G)^{-1}` is stable. Well-posedness holds for any network of
/// strictly proper modules.
pub fn check_wellposed_stable(spec: &NetworkSpec) -> bool {
    let radius = closed_loop_radius(spec);
    if !radius.is_finite() {
        log::warn!("closed-loop eigenvalue computation failed");
        return false;
    }
    radius < 1.0
}
