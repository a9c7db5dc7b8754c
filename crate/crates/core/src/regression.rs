//! Latent layout and the stacked linear model for the predictor outputs.
//!
//! Row `r` of the stacked model (output `k = outputs[r]`) reads
//!
//! ```text
//! xi_r = y_r - sum_{blocks b of row r} T(x_b) h_b
//! ```
//!
//! where `T(x)` is the one-sample-delayed `N x l` Toeplitz matrix of the
//! block's source signal `x_b` and `h_b` its `l` impulse coefficients. The
//! response is `y_0 = w_j - u_j - W_ji g(theta)` for the target output and
//! `y_r = w_k - u_k` otherwise. The own block of row 0 uses `y_0` as source,
//! so the target module enters through `(1 - S_j) G_ji w_i`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::network::{NodeId, PredictorModel};
use crate::simulate::SignalBundle;
use crate::tf::TransferFunction;

/// Latent groups: `s` (target output row), `b` (missing node row) and `f`
/// (additional node rows).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    S = 0,
    B = 1,
    F = 2,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::S, Group::B, Group::F];

    pub fn letter(self) -> char {
        match self {
            Group::S => 's',
            Group::B => 'b',
            Group::F => 'f',
        }
    }
}

/// Signal feeding one impulse-response block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// `w_j - u_j - G_ji(theta) w_i`.
    TargetOutput,
    /// `w_k - u_k`.
    OutputMinusExcitation(NodeId),
    Node(NodeId),
    /// Processed excitation `u_k`.
    Excitation(NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockDesc {
    pub name: String,
    pub group: Group,
    /// Output row the block contributes to.
    pub row: usize,
    pub source: Source,
    /// Offset inside the group vector.
    pub offset: usize,
    pub fixed_lambda: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentLayout {
    pub l: usize,
    pub target: (NodeId, NodeId),
    pub outputs: Vec<NodeId>,
    pub missing: Option<NodeId>,
    pub blocks: Vec<BlockDesc>,
    dims: [usize; 3],
}

impl LatentLayout {
    pub fn new(model: &PredictorModel, l: usize) -> Result<Self> {
        if l == 0 {
            return Err(Error::invalid("impulse response length l must be positive"));
        }
        let (j, i) = model.target;
        let missing = model.missing;
        let mut blocks = Vec::new();
        let mut dims = [0usize; 3];
        for (row, &k) in model.outputs.iter().enumerate() {
            let group = if row == 0 {
                Group::S
            } else if Some(k) == missing {
                Group::B
            } else {
                Group::F
            };
            let mut push = |name: String, source: Source, fixed_lambda: bool| {
                blocks.push(BlockDesc { name, group, row, source, offset: dims[group as usize], fixed_lambda });
                dims[group as usize] += l;
            };
            let g = group.letter();
            let own = if row == 0 { Source::TargetOutput } else { Source::OutputMinusExcitation(k) };
            push(format!("{g}{}_own", k.0), own, Some(k) == missing);
            let inputs = model.inputs_w.get(&k).map(Vec::as_slice).unwrap_or(&[]);
            for &n in inputs.iter().filter(|&&n| !(k == j && n == i)) {
                push(format!("{g}{}_w{}", k.0, n.0), Source::Node(n), Some(n) == missing);
            }
            for &n in model.inputs_u.get(&k).map(Vec::as_slice).unwrap_or(&[]) {
                push(format!("{g}{}_u{}", k.0, n.0), Source::Excitation(n), false);
            }
        }
        Ok(LatentLayout { l, target: model.target, outputs: model.outputs.clone(), missing, blocks, dims })
    }

    pub fn group_dim(&self, g: Group) -> usize {
        self.dims[g as usize]
    }

    pub fn rows(&self) -> usize {
        self.outputs.len()
    }

    pub fn missing_row(&self) -> Option<usize> {
        self.missing.and_then(|m| self.outputs.iter().position(|&k| k == m))
    }

    pub fn blocks_in(&self, g: Group) -> impl Iterator<Item = (usize, &BlockDesc)> {
        self.blocks.iter().enumerate().filter(move |(_, b)| b.group == g)
    }

    pub fn blocks_of_row(&self, row: usize) -> impl Iterator<Item = (usize, &BlockDesc)> {
        self.blocks.iter().enumerate().filter(move |(_, b)| b.row == row)
    }

    /// Index of the own block of the target output row.
    pub fn target_own_block(&self) -> usize {
        self.blocks.iter().position(|b| b.source == Source::TargetOutput).expect("layout always has s_j")
    }

    pub fn depends_on_missing(&self, source: Source) -> bool {
        match (source, self.missing) {
            (Source::Node(n) | Source::OutputMinusExcitation(n), Some(m)) => n == m,
            _ => false,
        }
    }

    pub fn block_names(&self) -> Vec<String> {
        self.blocks.iter().map(|b| b.name.clone()).collect()
    }
}

/// Current values of the `s`, `b`, `f` latent vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub groups: [Vec<f64>; 3],
}

impl Latents {
    pub fn zeros(layout: &LatentLayout) -> Self {
        Latents { groups: Group::ALL.map(|g| vec![0.0; layout.group_dim(g)]) }
    }

    pub fn block(&self, b: &BlockDesc, l: usize) -> &[f64] {
        &self.groups[b.group as usize][b.offset..b.offset + l]
    }
}

/// Parameterization of the target module `G_ji(q, theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TargetParam {
    /// `theta = [g(1), ..., g(len)]`.
    Fir { len: usize },
    /// `theta = [b_1..b_nb, a_1..a_na]` of `B(q)/A(q)` with monic `A`.
    Rational { nb: usize, na: usize },
}

impl TargetParam {
    pub fn n_params(&self) -> usize {
        match *self {
            TargetParam::Fir { len } => len,
            TargetParam::Rational { nb, na } => nb + na,
        }
    }

    pub fn check(&self) -> Result<()> {
        match *self {
            TargetParam::Fir { len: 0 } | TargetParam::Rational { nb: 0, .. } => {
                Err(Error::invalid("target parameterization needs at least one numerator coefficient"))
            }
            _ => Ok(()),
        }
    }

    pub fn transfer_function(&self, theta: &[f64]) -> TransferFunction {
        match *self {
            TargetParam::Fir { .. } => TransferFunction::fir(theta),
            TargetParam::Rational { nb, .. } => {
                let mut num = vec![0.0];
                num.extend_from_slice(&theta[..nb]);
                let mut den = vec![1.0];
                den.extend_from_slice(&theta[nb..]);
                TransferFunction { num, den }
            }
        }
    }

    /// Whether the model is stable (always for FIR).
    pub fn is_admissible(&self, theta: &[f64]) -> bool {
        theta.len() == self.n_params()
            && theta.iter().all(|v| v.is_finite())
            && match self {
                TargetParam::Fir { .. } => true,
                TargetParam::Rational { .. } => self.transfer_function(theta).is_stable(),
            }
    }

    /// `g(1), ..., g(n)`.
    pub fn impulse(&self, theta: &[f64], n: usize) -> Vec<f64> {
        match *self {
            TargetParam::Fir { len } => (0..n).map(|k| if k < len { theta[k] } else { 0.0 }).collect(),
            TargetParam::Rational { .. } => {
                self.transfer_function(theta).impulse_response(n).expect("monic denominator")
            }
        }
    }

    /// `d g / d theta`, `n x n_params`.
    pub fn jacobian(&self, theta: &[f64], n: usize) -> DMatrix<f64> {
        match *self {
            TargetParam::Fir { len } => DMatrix::from_fn(n, len, |t, k| if t == k { 1.0 } else { 0.0 }),
            TargetParam::Rational { nb, na } => {
                let den = TransferFunction { num: vec![1.0], den: self.transfer_function(theta).den };
                // h = impulse of 1/A from lag 0; g = impulse of B/A from lag 1.
                let h = den.impulse_response_from_zero(n).expect("monic denominator");
                let g = self.impulse(theta, n);
                // (1/A) * g, indexed like g (lag 1 first).
                let hg = crate::tf::convolve_truncated(&h, &g, n);
                let mut jac = DMatrix::zeros(n, nb + na);
                for t in 0..n {
                    let lag = t + 1;
                    for k in 1..=nb {
                        if lag >= k {
                            jac[(t, k - 1)] = h[lag - k];
                        }
                    }
                    for k in 1..=na {
                        if lag > k {
                            jac[(t, nb + k - 1)] = -hg[lag - k - 1];
                        }
                    }
                }
                jac
            }
        }
    }

    /// Parameter vector of a transfer function in this parameterization.
    pub fn theta_of(&self, tf: &TransferFunction) -> Option<Vec<f64>> {
        match *self {
            TargetParam::Fir { len } => tf.impulse_response(len).ok(),
            TargetParam::Rational { nb, na } => {
                if tf.num.len() > nb + 1 || tf.den.len() > na + 1 || tf.num.first().is_some_and(|&b| b != 0.0) {
                    return None;
                }
                let mut theta: Vec<f64> = (1..=nb).map(|k| tf.num.get(k).copied().unwrap_or(0.0)).collect();
                theta.extend((1..=na).map(|k| tf.den.get(k).copied().unwrap_or(0.0)));
                Some(theta)
            }
        }
    }
}

/// `N x cols` matrix whose column `c` (0-based) holds `signal` delayed by
/// `delay + c` samples, zero padded at the top and optionally negated.
pub fn toeplitz_delayed(signal: &[f64], cols: usize, delay: usize, negate: bool) -> DMatrix<f64> {
    let n = signal.len();
    let sign = if negate { -1.0 } else { 1.0 };
    DMatrix::from_fn(n, cols, |t, c| if t >= delay + c { sign * signal[t - delay - c] } else { 0.0 })
}

/// The stacked model for one data record and one value of `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedModel {
    layout: LatentLayout,
    param: TargetParam,
    theta: Vec<f64>,
    n: usize,
    /// `g(1..N)` of `G_ji(theta)`.
    g: Vec<f64>,
    w_i: Vec<f64>,
    /// `w_k - u_k` per row (row 0 without the target term).
    raw: Vec<Vec<f64>>,
    /// `y_r` per row.
    response: Vec<Vec<f64>>,
    /// Source signal per block.
    sources: Vec<Vec<f64>>,
    /// Node signals (`None` for nodes the model does not read).
    nodes: Vec<Option<Vec<f64>>>,
    u: Vec<Vec<f64>>,
    w_m: Option<Vec<f64>>,
}

/// Assembles the stacked model. The missing node is never read from
/// `signals`; its slot starts at zero and is filled by [`StackedModel::set_missing`].
pub fn build_stacked_model(
    model: &PredictorModel,
    signals: &SignalBundle,
    layout: &LatentLayout,
    param: TargetParam,
    theta: &[f64],
) -> Result<StackedModel> {
    param.check()?;
    if layout.outputs != model.outputs || layout.target != model.target || layout.missing != model.missing {
        return Err(Error::invalid("latent layout does not belong to this predictor model"));
    }
    if theta.len() != param.n_params() {
        return Err(Error::dim(format!("theta has {} entries, parameterization needs {}", theta.len(), param.n_params())));
    }
    let n = signals.len();
    if n < 2 {
        return Err(Error::dim("at least two samples are required"));
    }
    let node_count = signals.node_count();
    let mut nodes: Vec<Option<Vec<f64>>> = vec![None; node_count];
    let mut needed: Vec<NodeId> = model.outputs.clone();
    needed.push(model.i());
    needed.extend(layout.blocks.iter().filter_map(|b| match b.source {
        Source::Node(k) => Some(k),
        _ => None,
    }));
    for k in needed {
        if k.0 == 0 || k.0 > node_count {
            return Err(Error::InvalidNode { node: k.0, count: node_count });
        }
        if Some(k) == model.missing {
            continue;
        }
        let w = signals.w(k);
        if w.len() != n || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::dim(format!("signal {k} is missing or not finite")));
        }
        nodes[k.index()] = Some(w.to_vec());
    }
    let w_m = model.missing.map(|_| vec![0.0; n]);
    let mut sm = StackedModel {
        layout: layout.clone(),
        param,
        theta: theta.to_vec(),
        n,
        g: Vec::new(),
        w_i: nodes[model.i().index()].clone().expect("target input is measured"),
        raw: Vec::new(),
        response: Vec::new(),
        sources: vec![Vec::new(); layout.blocks.len()],
        nodes,
        u: signals.u.clone(),
        w_m,
    };
    sm.rebuild_rows();
    sm.set_theta(theta)?;
    Ok(sm)
}

impl StackedModel {
    pub fn layout(&self) -> &LatentLayout {
        &self.layout
    }

    pub fn param(&self) -> TargetParam {
        self.param
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn l(&self) -> usize {
        self.layout.l
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn w_i(&self) -> &[f64] {
        &self.w_i
    }

    pub fn response(&self, row: usize) -> &[f64] {
        &self.response[row]
    }

    /// `w_j - u_j` for the target row, `w_k - u_k` otherwise.
    pub fn raw_output(&self, row: usize) -> &[f64] {
        &self.raw[row]
    }

    pub fn source(&self, block: usize) -> &[f64] {
        &self.sources[block]
    }

    pub fn missing_signal(&self) -> Option<&[f64]> {
        self.w_m.as_deref()
    }

    pub fn excitation(&self, node: NodeId) -> &[f64] {
        &self.u[node.index()]
    }

    fn node_signal(&self, k: NodeId) -> &[f64] {
        if Some(k) == self.layout.missing {
            self.w_m.as_deref().expect("missing slot exists")
        } else {
            self.nodes[k.index()].as_deref().expect("node signal loaded at build time")
        }
    }

    fn rebuild_rows(&mut self) {
        self.raw = self
            .layout
            .outputs
            .iter()
            .map(|&k| {
                let u = &self.u[k.index()];
                self.node_signal(k).iter().zip(u).map(|(w, u)| w - u).collect()
            })
            .collect();
        for (idx, b) in self.layout.blocks.iter().enumerate() {
            let src = match b.source {
                Source::TargetOutput => continue,
                Source::OutputMinusExcitation(k) => {
                    let row = self.layout.outputs.iter().position(|&o| o == k).expect("own block of an output");
                    self.raw[row].clone()
                }
                Source::Node(k) => self.node_signal(k).to_vec(),
                Source::Excitation(k) => self.u[k.index()].clone(),
            };
            self.sources[idx] = src;
        }
        self.refresh_target_row();
    }

    fn refresh_target_row(&mut self) {
        if self.g.is_empty() {
            self.response = self.raw.clone();
        } else {
            let target_term = linalg::delayed_conv(&self.w_i, &self.g, self.n);
            let y0: Vec<f64> = self.raw[0].iter().zip(&target_term).map(|(a, b)| a - b).collect();
            self.response = self.raw.clone();
            self.response[0] = y0;
        }
        let own = self.layout.target_own_block();
        self.sources[own] = self.response[0].clone();
    }

    /// Replaces `theta` and every quantity derived from it.
    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param.n_params() || theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("theta has the wrong length or non-finite entries"));
        }
        self.theta = theta.to_vec();
        self.g = self.param.impulse(theta, self.n);
        self.refresh_target_row();
        Ok(())
    }

    /// Overwrites the missing-node signal in place.
    pub fn set_missing(&mut self, w_m: &[f64]) -> Result<()> {
        let m = self.layout.missing.ok_or_else(|| Error::invalid("model has no missing node"))?;
        if w_m.len() != self.n {
            return Err(Error::dim(format!("missing signal has length {}, expected {}", w_m.len(), self.n)));
        }
        self.w_m = Some(w_m.to_vec());
        let u_m = &self.u[m.index()];
        let row = self.layout.missing_row().expect("missing node is an output");
        self.raw[row] = w_m.iter().zip(u_m).map(|(w, u)| w - u).collect();
        self.response[row] = self.raw[row].clone();
        for (idx, b) in self.layout.blocks.iter().enumerate() {
            match b.source {
                Source::Node(k) if k == m => self.sources[idx] = w_m.to_vec(),
                Source::OutputMinusExcitation(k) if k == m => self.sources[idx] = self.raw[row].clone(),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn swap_missing_signal(&self, w_m: &[f64]) -> Result<StackedModel> {
        let mut out = self.clone();
        out.set_missing(w_m)?;
        Ok(out)
    }

    /// `y_r - sum T(x_b) h_b` over the row's blocks, skipping `exclude`.
    pub fn row_residual(&self, row: usize, latents: &Latents, exclude: Option<Group>) -> Vec<f64> {
        let mut e = self.response[row].clone();
        for (idx, b) in self.layout.blocks_of_row(row) {
            if Some(b.group) == exclude {
                continue;
            }
            linalg::delayed_conv_add(&self.sources[idx], latents.block(b, self.layout.l), -1.0, &mut e);
        }
        e
    }

    pub fn residuals(&self, latents: &Latents) -> Vec<Vec<f64>> {
        (0..self.layout.rows()).map(|r| self.row_residual(r, latents, None)).collect()
    }

    /// Dense `N x l` regressor of one block.
    pub fn regressor(&self, block: usize) -> DMatrix<f64> {
        toeplitz_delayed(&self.sources[block], self.layout.l, 1, false)
    }

    /// Dense stacked regressor of a group: `(rows * N) x dim(group)`.
    pub fn group_regressor(&self, g: Group) -> DMatrix<f64> {
        let l = self.layout.l;
        let mut x = DMatrix::zeros(self.layout.rows() * self.n, self.layout.group_dim(g));
        for (idx, b) in self.layout.blocks_in(g) {
            x.view_mut((b.row * self.n, b.offset), (self.n, l)).copy_from(&self.regressor(idx));
        }
        x
    }

    /// Stacked response `[y_0; y_1; ...]`.
    pub fn stacked_response(&self) -> DVector<f64> {
        DVector::from_iterator(self.layout.rows() * self.n, self.response.iter().flatten().copied())
    }

    /// `W_ji`, the `N x N` Toeplitz of the delayed target input.
    pub fn target_input_matrix(&self) -> DMatrix<f64> {
        toeplitz_delayed(&self.w_i, self.n, 1, false)
    }

    /// Residual rows as affine functions of the missing signal:
    /// `xi_r = c_r + A_r w_m`, with `A_r` lower triangular banded Toeplitz
    /// with first column `a_r` (length `l + 1`).
    pub fn missing_affine(&self, latents: &Latents) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let m = self.layout.missing.ok_or_else(|| Error::invalid("model has no missing node"))?;
        let m_row = self.layout.missing_row().expect("missing node is an output");
        let l = self.layout.l;
        let u_m = &self.u[m.index()];
        let neg_u_m: Vec<f64> = u_m.iter().map(|u| -u).collect();
        let mut c = Vec::with_capacity(self.layout.rows());
        let mut a = Vec::with_capacity(self.layout.rows());
        for row in 0..self.layout.rows() {
            let mut ar = vec![0.0; l + 1];
            let mut cr = if row == m_row {
                ar[0] = 1.0;
                neg_u_m.clone()
            } else {
                self.response[row].clone()
            };
            for (idx, b) in self.layout.blocks_of_row(row) {
                let h = latents.block(b, l);
                let src: &[f64] = match b.source {
                    Source::Node(k) if k == m => {
                        sub_assign_shifted(&mut ar, h);
                        continue;
                    }
                    Source::OutputMinusExcitation(k) if k == m => {
                        sub_assign_shifted(&mut ar, h);
                        &neg_u_m
                    }
                    _ => &self.sources[idx],
                };
                linalg::delayed_conv_add(src, h, -1.0, &mut cr);
            }
            c.push(cr);
            a.push(ar);
        }
        Ok((c, a))
    }
}

fn sub_assign_shifted(a: &mut [f64], h: &[f64]) {
    for (k, &hk) in h.iter().enumerate() {
        a[k + 1] -= hk;
    }
}
