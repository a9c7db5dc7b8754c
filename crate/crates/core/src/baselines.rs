//! Comparison estimators: the parametric direct method (prediction error
//! minimization on a MISO model) and the estimator variants used in the
//! Monte Carlo study.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcem::{run_mcem, EstimatorConfig, RunOptions};
use crate::network::{build_predictor_model, NetworkSpec, NodeId, NodeSet, PredictorModel};
use crate::optim::{fit_rational_to_impulse, levenberg_marquardt, numeric_jacobian, LmOptions};
use crate::regression::TargetParam;
use crate::rng;
use crate::simulate::SignalBundle;
use crate::tf::{poly_root_radius, TransferFunction};

/// Multi-input single-output model for the direct method:
/// `w_j = u_j + sum_k B_k/A_k w_k + C/D e_j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MisoSpec {
    pub output: NodeId,
    pub inputs: Vec<NodeId>,
    /// `(n_b, n_a)` per input.
    pub orders: Vec<(usize, usize)>,
    /// `(n_c, n_d)` of the noise model `C/D`.
    pub noise_orders: (usize, usize),
}

impl MisoSpec {
    /// Uses the true module and noise orders of `spec`.
    pub fn from_network(spec: &NetworkSpec, output: NodeId, inputs: &[NodeId]) -> Result<Self> {
        let orders = inputs
            .iter()
            .map(|&k| {
                let tf = spec
                    .module(output, k)
                    .ok_or_else(|| Error::MissingModule(format!("G_{}{}", output.0, k.0)))?;
                Ok((tf.num.len().saturating_sub(1), tf.den.len() - 1))
            })
            .collect::<Result<Vec<_>>>()?;
        let noise_orders = spec.noise(output).map_or((0, 0), |n| (n.filter.num.len() - 1, n.filter.den.len() - 1));
        let miso = MisoSpec { output, inputs: inputs.to_vec(), orders, noise_orders };
        miso.check()?;
        Ok(miso)
    }

    /// Orders of the modules seen once `missing` is removed from the network:
    /// input `k` carries `G_jk + G_jm G_mk`.
    pub fn immersed(spec: &NetworkSpec, output: NodeId, inputs: &[NodeId], missing: NodeId) -> Result<Self> {
        let order = |tf: &TransferFunction| (tf.num.len().saturating_sub(1), tf.den.len() - 1);
        let via_m = spec.module(output, missing).map(order);
        let orders = inputs
            .iter()
            .map(|&k| {
                let direct = spec.module(output, k).map(order);
                let path = via_m.zip(spec.module(missing, k).map(order));
                match (direct, path) {
                    (Some(d), None) => Ok(d),
                    (None, Some(((b1, a1), (b2, a2)))) => Ok((b1 + b2, a1 + a2)),
                    (Some((b0, a0)), Some(((b1, a1), (b2, a2)))) => {
                        Ok(((b0 + a1 + a2).max(b1 + b2 + a0), a0 + a1 + a2))
                    }
                    (None, None) => Err(Error::MissingModule(format!("G_{}{}", output.0, k.0))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let noise_orders = spec.noise(output).map_or((0, 0), |n| (n.filter.num.len() - 1, n.filter.den.len() - 1));
        let miso = MisoSpec { output, inputs: inputs.to_vec(), orders, noise_orders };
        miso.check()?;
        Ok(miso)
    }

    pub fn check(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::invalid("MISO model needs at least one input"));
        }
        if self.inputs.len() != self.orders.len() {
            return Err(Error::dim("one order pair per input required"));
        }
        if self.inputs.contains(&self.output) {
            return Err(Error::invalid(format!("input list contains the output {}", self.output)));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.orders.iter().map(|(b, a)| b + a).sum::<usize>() + self.noise_orders.0 + self.noise_orders.1
    }

    fn offset(&self, input: usize) -> usize {
        self.orders[..input].iter().map(|(b, a)| b + a).sum()
    }

    /// Module `B_k/A_k` of input number `k`.
    pub fn module(&self, x: &[f64], k: usize) -> TransferFunction {
        let (nb, na) = self.orders[k];
        let o = self.offset(k);
        let mut num = vec![0.0];
        num.extend_from_slice(&x[o..o + nb]);
        let mut den = vec![1.0];
        den.extend_from_slice(&x[o + nb..o + nb + na]);
        TransferFunction { num, den }
    }

    /// Noise model `C/D`.
    pub fn noise(&self, x: &[f64]) -> TransferFunction {
        let (nc, nd) = self.noise_orders;
        let o = self.offset(self.inputs.len());
        let mut num = vec![1.0];
        num.extend_from_slice(&x[o..o + nc]);
        let mut den = vec![1.0];
        den.extend_from_slice(&x[o + nc..o + nc + nd]);
        TransferFunction { num, den }
    }

    /// Stable module denominators and minimum-phase noise numerator.
    pub fn is_admissible(&self, x: &[f64]) -> bool {
        x.iter().all(|v| v.is_finite())
            && (0..self.inputs.len()).all(|k| poly_root_radius(&self.module(x, k).den) < 0.999)
            && poly_root_radius(&self.noise(x).num) < 0.999
    }

    /// One-step-ahead prediction errors `D/C (w_j - u_j - sum_k B_k/A_k w_k)`.
    pub fn prediction_errors(&self, signals: &SignalBundle, x: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = signals.w(self.output).iter().zip(signals.u(self.output)).map(|(w, u)| w - u).collect();
        for (k, &node) in self.inputs.iter().enumerate() {
            for (acc, v) in y.iter_mut().zip(self.module(x, k).filter(signals.w(node))) {
                *acc -= v;
            }
        }
        let h = self.noise(x);
        TransferFunction { num: h.den, den: h.num }.filter(&y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PemResult {
    /// Parameters of every module followed by the noise model.
    pub params: Vec<f64>,
    pub modules: Vec<(NodeId, TransferFunction)>,
    pub noise: TransferFunction,
    /// Mean squared prediction error.
    pub cost: f64,
    /// Best cost reached from each start.
    pub start_costs: Vec<f64>,
    /// Cost history of the winning start.
    pub history: Vec<f64>,
    pub converged: bool,
}

impl PemResult {
    pub fn module_of(&self, node: NodeId) -> Option<&TransferFunction> {
        self.modules.iter().find(|(k, _)| *k == node).map(|(_, tf)| tf)
    }
}

pub const PEM_STARTS: usize = 5;

/// FIR least squares on all inputs, each FIR then reduced to its rational
/// order. Noise model starts at `C = D = 1`.
fn pem_initial(signals: &SignalBundle, miso: &MisoSpec) -> Vec<f64> {
    let n = signals.len();
    let taps = 20.min(n / (2 * miso.inputs.len()).max(1)).max(1);
    let p = taps * miso.inputs.len();
    let mut phi = DMatrix::zeros(n, p);
    for (k, &node) in miso.inputs.iter().enumerate() {
        let w = signals.w(node);
        for c in 0..taps {
            for t in (c + 1)..n {
                phi[(t, k * taps + c)] = w[t - c - 1];
            }
        }
    }
    let y = DVector::from_iterator(n, signals.w(miso.output).iter().zip(signals.u(miso.output)).map(|(w, u)| w - u));
    let mut a = phi.transpose() * &phi;
    let ridge = 1e-8 * (a.trace() / p as f64).max(1e-300);
    for k in 0..p {
        a[(k, k)] += ridge;
    }
    let fir = a.cholesky().map(|c| c.solve(&(phi.transpose() * y))).unwrap_or_else(|| DVector::zeros(p));
    let mut x = Vec::with_capacity(miso.n_params());
    for (k, &(nb, na)) in miso.orders.iter().enumerate() {
        x.extend(fit_rational_to_impulse(&fir.as_slice()[k * taps..(k + 1) * taps], nb, na));
    }
    x.extend(std::iter::repeat_n(0.0, miso.noise_orders.0 + miso.noise_orders.1));
    x
}

fn perturb(x: &[f64], miso: &MisoSpec, seed: u64, start: usize) -> Vec<f64> {
    let mut g = rng::stream(rng::label_seed(seed, "pem"), start as u64);
    for _ in 0..100 {
        let cand: Vec<f64> = x
            .iter()
            .map(|&v| {
                let z: f64 = StandardNormal.sample(&mut g);
                v + 0.3 * z * (v.abs() + 0.1)
            })
            .collect();
        if miso.is_admissible(&cand) {
            return cand;
        }
    }
    x.to_vec()
}

/// Prediction error method: minimizes the summed squared one-step-ahead
/// prediction errors from `PEM_STARTS` seeded starts (the FIR-based
/// initial point, then random perturbations of it).
pub fn direct_pem(signals: &SignalBundle, miso: &MisoSpec, seed: u64) -> Result<PemResult> {
    miso.check()?;
    if signals.len() <= miso.n_params() {
        return Err(Error::dim(format!("{} samples for {} parameters", signals.len(), miso.n_params())));
    }
    let scale = 1.0 / (signals.len() as f64).sqrt();
    let raw = |x: &[f64]| -> Option<DVector<f64>> {
        let e = miso.prediction_errors(signals, x);
        e.iter().all(|v| v.is_finite()).then(|| DVector::from_vec(e) * scale)
    };
    let residual = |x: &[f64]| if miso.is_admissible(x) { raw(x) } else { None };
    let x0 = pem_initial(signals, miso);
    let x0 = if miso.is_admissible(&x0) { x0 } else { vec![0.0; miso.n_params()] };
    let opts = LmOptions::default();
    let mut best: Option<crate::optim::LmResult> = None;
    let mut start_costs = Vec::with_capacity(PEM_STARTS);
    for start in 0..PEM_STARTS {
        let x_start = if start == 0 { x0.clone() } else { perturb(&x0, miso, seed, start) };
        match levenberg_marquardt(&x_start, residual, |x| numeric_jacobian(raw, x), |x| miso.is_admissible(x), &opts) {
            Ok(res) => {
                start_costs.push(res.cost);
                if best.as_ref().is_none_or(|b| res.cost < b.cost) {
                    best = Some(res);
                }
            }
            Err(_) => start_costs.push(f64::INFINITY),
        }
    }
    let best = best.ok_or_else(|| Error::Numerical("prediction error minimization failed from every start".into()))?;
    Ok(PemResult {
        modules: miso.inputs.iter().enumerate().map(|(k, &node)| (node, miso.module(&best.x, k))).collect(),
        noise: miso.noise(&best.x),
        cost: best.cost,
        start_costs,
        history: best.history,
        converged: best.converged,
        params: best.x,
    })
}

/// Estimators compared in the Monte Carlo study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Missing node reconstructed, no additional node.
    #[serde(rename = "MC-EBDM")]
    McEbdm,
    /// Missing node reconstructed with an additional node.
    #[serde(rename = "MC-EBDMA")]
    McEbdma,
    /// Kernel-based direct method with the missing node measured (oracle).
    #[serde(rename = "EBDM")]
    Ebdm,
    /// Kernel-based direct method with the missing node dropped.
    #[serde(rename = "EBDM+M")]
    EbdmM,
    /// Parametric direct method with true orders, missing node measured (oracle).
    #[serde(rename = "DM+TO")]
    DmTo,
    /// Parametric direct method with true orders, missing node dropped.
    #[serde(rename = "DM+TO+M")]
    DmToM,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::McEbdm, Variant::McEbdma, Variant::Ebdm, Variant::EbdmM, Variant::DmTo, Variant::DmToM];

    pub fn name(self) -> &'static str {
        match self {
            Variant::McEbdm => "MC-EBDM",
            Variant::McEbdma => "MC-EBDMA",
            Variant::Ebdm => "EBDM",
            Variant::EbdmM => "EBDM+M",
            Variant::DmTo => "DM+TO",
            Variant::DmToM => "DM+TO+M",
        }
    }

    pub fn reconstructs_missing(self) -> bool {
        matches!(self, Variant::McEbdm | Variant::McEbdma)
    }

    /// Whether the variant sees the missing node signal.
    pub fn is_oracle(self) -> bool {
        matches!(self, Variant::Ebdm | Variant::DmTo)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown estimator variant '{s}'")))
    }
}

/// Identification problem shared by all variants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Problem {
    /// `(j, i)`.
    pub target: (NodeId, NodeId),
    pub measured: NodeSet,
    pub missing: NodeId,
}

impl Problem {
    /// Node inputs of the direct method: every node with a module into `j`,
    /// optionally without the missing node.
    pub fn direct_inputs(&self, spec: &NetworkSpec, with_missing: bool) -> Vec<NodeId> {
        spec.predecessors(self.target.0).filter(|&k| with_missing || k != self.missing).collect()
    }
}

/// Kernel-based direct method on a predictor model without missing node.
pub fn ebdm(signals: &SignalBundle, model: &PredictorModel, config: &EstimatorConfig) -> Result<crate::mcem::EstimateResult> {
    if model.missing.is_some() {
        return Err(Error::invalid("EBDM expects a predictor model without missing node"));
    }
    run_mcem(signals, model, config, &RunOptions::default())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantOutcome {
    pub variant: Variant,
    pub theta: Vec<f64>,
    /// Impulse response of the target estimate, length `N`.
    pub g_hat: Vec<f64>,
    pub w_m_hat: Option<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
}

/// Runs one variant on one data record. The parametric variants use the
/// true module orders of `spec`; the kernel variants use `config`.
pub fn run_variant(
    variant: Variant,
    spec: &NetworkSpec,
    problem: &Problem,
    signals: &SignalBundle,
    config: &EstimatorConfig,
) -> Result<VariantOutcome> {
    let (j, i) = problem.target;
    let n = signals.len();
    match variant {
        Variant::McEbdm | Variant::McEbdma | Variant::Ebdm | Variant::EbdmM => {
            let model = match variant {
                Variant::McEbdm | Variant::McEbdma => build_predictor_model(
                    spec,
                    problem.target,
                    &problem.measured,
                    Some(problem.missing),
                    variant == Variant::McEbdma,
                )?,
                _ => PredictorModel::direct(
                    spec.node_count(),
                    problem.target,
                    &problem.direct_inputs(spec, variant == Variant::Ebdm),
                )?,
            };
            let res = run_mcem(signals, &model, config, &RunOptions::default())?;
            Ok(VariantOutcome {
                variant,
                theta: res.theta,
                g_hat: res.g_hat,
                w_m_hat: res.w_m_hat,
                converged: res.converged,
                iterations: res.iterations,
            })
        }
        Variant::DmTo | Variant::DmToM => {
            let inputs = problem.direct_inputs(spec, variant == Variant::DmTo);
            let miso = MisoSpec::from_network(spec, j, &inputs)?;
            let res = direct_pem(signals, &miso, config.seed)?;
            let tf = res.module_of(i).ok_or_else(|| Error::invalid("target input missing from MISO inputs"))?;
            let theta = match config.target {
                TargetParam::Rational { .. } => config.target.theta_of(tf),
                TargetParam::Fir { .. } => None,
            }
            .unwrap_or_else(|| tf.num[1..].iter().chain(&tf.den[1..]).copied().collect());
            Ok(VariantOutcome {
                variant,
                theta,
                g_hat: tf.impulse_response(n)?,
                w_m_hat: None,
                converged: res.converged,
                iterations: res.history.len(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("DM".parse::<Variant>().is_err());
    }

    #[test]
    fn miso_parameter_layout() {
        let miso = MisoSpec { output: NodeId(3), inputs: vec![NodeId(1), NodeId(4)], orders: vec![(2, 1), (1, 0)], noise_orders: (1, 2) };
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        assert_eq!(miso.n_params(), 7);
        assert_eq!(miso.module(&x, 0), TransferFunction { num: vec![0.0, 1.0, 2.0], den: vec![1.0, 3.0] });
        assert_eq!(miso.module(&x, 1), TransferFunction { num: vec![0.0, 4.0], den: vec![1.0] });
        assert_eq!(miso.noise(&x), TransferFunction { num: vec![1.0, 5.0], den: vec![1.0, 6.0, 7.0] });
    }

    #[test]
    fn immersed_orders_of_benchmark() {
        let spec = crate::presets::four_node_network();
        let miso = MisoSpec::immersed(&spec, NodeId(3), &[NodeId(1), NodeId(4)], NodeId(2)).unwrap();
        assert_eq!(miso.orders, vec![(5, 4), (7, 6)]);
        assert_eq!(miso.noise_orders, (3, 3));
    }
}
