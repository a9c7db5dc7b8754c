//! Predictor model selection: which node signals act as outputs and inputs
//! when identifying one target module with (at most) one missing node.

use std::collections::BTreeMap;

use super::graph::{check_parallel_path_loop, find_confounders, has_unmeasured_path, ParallelPathReport};
use super::spec::{NetworkSpec, NodeId, NodeSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictorModel {
    /// `(j, i)`: the target module `G_ji` maps `w_i` into `w_j`.
    pub target: (NodeId, NodeId),
    /// Output order used everywhere downstream: `j`, then additional nodes, then `m`.
    pub outputs: Vec<NodeId>,
    pub missing: Option<NodeId>,
    pub additional: Vec<NodeId>,
    pub y: NodeSet,
    pub d: NodeSet,
    pub q: NodeSet,
    pub o: NodeSet,
    pub u: NodeSet,
    pub z: NodeSet,
    /// Measured nodes plus the missing node.
    pub w: NodeSet,
    /// `D_k^w` per output `k`: node inputs of the predictor for `w_k`.
    pub inputs_w: BTreeMap<NodeId, Vec<NodeId>>,
    /// `D_k^u` per output `k`, excluding `k` itself (its excitation enters as a known offset).
    pub inputs_u: BTreeMap<NodeId, Vec<NodeId>>,
    pub use_additional: bool,
}

impl PredictorModel {
    pub fn j(&self) -> NodeId {
        self.target.0
    }

    pub fn i(&self) -> NodeId {
        self.target.1
    }

    /// Direct-method configuration: single output `j`, node inputs `inputs`
    /// (which must contain `i`), no excitation blocks and no structural checks.
    pub fn direct(node_count: usize, target: (NodeId, NodeId), inputs: &[NodeId]) -> Result<Self> {
        let (j, i) = target;
        let all: NodeSet = (1..=node_count).map(NodeId).collect();
        for &n in inputs.iter().chain([&j, &i]) {
            if !all.contains(&n) {
                return Err(Error::InvalidNode { node: n.0, count: node_count });
            }
        }
        if !inputs.contains(&i) {
            return Err(Error::invalid(format!("direct model inputs must include the target input {i}")));
        }
        if inputs.contains(&j) {
            return Err(Error::invalid(format!("direct model inputs must not include the output {j}")));
        }
        let d: NodeSet = inputs.iter().copied().collect();
        let y: NodeSet = [j].into();
        let mut w = d.clone();
        w.insert(j);
        Ok(PredictorModel {
            target,
            outputs: vec![j],
            missing: None,
            additional: Vec::new(),
            q: NodeSet::new(),
            o: y.clone(),
            u: d.clone(),
            z: all.difference(&w).copied().collect(),
            y,
            d,
            w,
            inputs_w: [(j, inputs.to_vec())].into(),
            inputs_u: [(j, Vec::new())].into(),
            use_additional: false,
        })
    }

    /// Re-checks Conditions 2-4 and the set algebra.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        let report = condition_report(spec, self)?;
        if let Some((name, witness)) = report.first_violation() {
            return Err(Error::ConditionViolated { condition: name.to_string(), witness });
        }
        self.check_set_algebra(spec.node_count())
    }

    pub fn check_set_algebra(&self, node_count: usize) -> Result<()> {
        let union_qo: NodeSet = self.q.union(&self.o).copied().collect();
        let union_qu: NodeSet = self.q.union(&self.u).copied().collect();
        let dy: NodeSet = self.d.union(&self.y).copied().collect();
        let all: NodeSet = (1..=node_count).map(NodeId).collect();
        let z: NodeSet = all.difference(&dy).copied().collect();
        let ok = union_qo == self.y
            && union_qu == self.d
            && self.q.is_disjoint(&self.o)
            && self.q.is_disjoint(&self.u)
            && z == self.z
            && self.y.contains(&self.j())
            && self.d.contains(&self.i())
            && self.missing.is_none_or(|m| self.y.contains(&m) && self.d.contains(&m));
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("predictor model signal sets are inconsistent"))
        }
    }
}

/// Outcome of each structural condition for a predictor model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionReport {
    /// Condition 1: parallel paths and loops blocked by the inputs `D`.
    pub condition1: ParallelPathReport,
    /// Condition 2: confounders between `w_j` and `W \ {j}` given `W`.
    pub confounders: Vec<NodeId>,
    /// Condition 3: nodes `h` in `O \ {j}` with an unmeasured path to `w_j`.
    pub unblocked_outputs: Vec<NodeId>,
    /// Condition 4: parallel paths and loops blocked by `W`.
    pub condition4: ParallelPathReport,
}

impl ConditionReport {
    pub fn first_violation(&self) -> Option<(&'static str, String)> {
        if let Some(l) = self.confounders.first() {
            return Some(("Condition 2", format!("confounding noise e{}", l.0)));
        }
        if let Some(h) = self.unblocked_outputs.first() {
            return Some(("Condition 3", format!("unmeasured path from {h} to the target output")));
        }
        if let Some(w) = self.condition4.witnesses.first() {
            return Some(("Condition 4", ParallelPathReport::describe_witness(w)));
        }
        None
    }
}

pub fn condition_report(spec: &NetworkSpec, model: &PredictorModel) -> Result<ConditionReport> {
    let j = model.j();
    let condition1 = check_parallel_path_loop(spec, model.target, &model.d)?;
    let condition4 = check_parallel_path_loop(spec, model.target, &model.w)?;
    let jset: NodeSet = [j].into();
    let rest: NodeSet = model.w.iter().copied().filter(|&k| k != j).collect();
    let confounders = if rest.is_empty() { Vec::new() } else { find_confounders(spec, &jset, &rest, &model.w)? };
    let mut unblocked_outputs = Vec::new();
    for &h in model.o.iter().filter(|&&h| h != j) {
        if has_unmeasured_path(spec, h, j, &model.w)? {
            unblocked_outputs.push(h);
        }
    }
    Ok(ConditionReport { condition1, confounders, unblocked_outputs, condition4 })
}

/// Builds the predictor model for target `G_ji` from the measured set, with
/// an optional missing node that is treated as measured for every path and
/// confounder analysis.
pub fn build_predictor_model(
    spec: &NetworkSpec,
    target: (NodeId, NodeId),
    measured: &NodeSet,
    missing: Option<NodeId>,
    use_additional: bool,
) -> Result<PredictorModel> {
    let (j, i) = target;
    spec.check_node(j)?;
    spec.check_node(i)?;
    spec.check_nodes(measured)?;
    if spec.module(j, i).is_none() {
        return Err(Error::MissingModule(format!("G_{}{}", j.0, i.0)));
    }
    if let Some(m) = missing {
        spec.check_node(m)?;
        if m == i {
            return Err(Error::MissingTargetInput(m));
        }
        if m == j {
            return Err(Error::invalid("the missing node cannot be the target output"));
        }
        if measured.contains(&m) {
            return Err(Error::invalid(format!("missing node {m} is listed as measured")));
        }
    }
    if !measured.contains(&i) || !measured.contains(&j) {
        return Err(Error::invalid("target input and output must both be measured"));
    }

    let mut w = measured.clone();
    w.extend(missing);

    let mut y: NodeSet = [j].into();
    let mut d: NodeSet = [i].into();
    if let Some(m) = missing {
        y.insert(m);
        d.insert(m);
    }

    let mut additional = Vec::new();
    if let (Some(m), true) = (missing, use_additional) {
        for &k in measured.iter().filter(|&&k| k != j) {
            if has_unmeasured_path(spec, m, k, &w)? {
                additional.push(k);
            }
        }
        y.extend(additional.iter().copied());
    }

    let mut inputs_w = BTreeMap::new();
    let mut inputs_u = BTreeMap::new();
    let excited = spec.excited_nodes();
    for &k in &y {
        let mut dw = Vec::new();
        for &l in w.iter().filter(|&&l| l != k) {
            if has_unmeasured_path(spec, l, k, &w)? {
                dw.push(l);
            }
        }
        let mut du = Vec::new();
        for &l in excited.iter().filter(|&&l| l != k && !w.contains(&l)) {
            if has_unmeasured_path(spec, l, k, &w)? {
                du.push(l);
            }
        }
        d.extend(dw.iter().copied());
        inputs_w.insert(k, dw);
        inputs_u.insert(k, du);
    }

    let all: NodeSet = spec.nodes().collect();
    let dy: NodeSet = d.union(&y).copied().collect();
    let mut outputs = vec![j];
    outputs.extend(additional.iter().copied());
    outputs.extend(missing);

    let model = PredictorModel {
        target,
        outputs,
        missing,
        additional,
        q: y.intersection(&d).copied().collect(),
        o: y.difference(&d).copied().collect(),
        u: d.difference(&y).copied().collect(),
        z: all.difference(&dy).copied().collect(),
        y,
        d,
        w,
        inputs_w,
        inputs_u,
        use_additional,
    };
    model.validate(spec)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::spec::node_set;
    use crate::presets::four_node_network;

    fn n(k: usize) -> NodeId {
        NodeId(k)
    }

    #[test]
    fn without_additional_node() {
        let spec = four_node_network();
        let model = build_predictor_model(&spec, (n(3), n(1)), &node_set(&[1, 3, 4]), Some(n(2)), false).unwrap();
        assert_eq!(model.y, node_set(&[2, 3]));
        assert_eq!(model.d, node_set(&[1, 2, 4]));
        assert_eq!(model.o, node_set(&[3]));
        assert_eq!(model.q, node_set(&[2]));
        assert_eq!(model.u, node_set(&[1, 4]));
        assert_eq!(model.w, node_set(&[1, 2, 3, 4]));
        assert!(model.z.is_empty());
        assert_eq!(model.outputs, vec![n(3), n(2)]);
        assert_eq!(model.inputs_w[&n(3)], vec![n(1), n(2), n(4)]);
        assert_eq!(model.inputs_w[&n(2)], vec![n(1), n(4)]);
        assert!(model.inputs_u.values().all(Vec::is_empty));
    }

    #[test]
    fn with_additional_node() {
        let spec = four_node_network();
        let model = build_predictor_model(&spec, (n(3), n(1)), &node_set(&[1, 3, 4]), Some(n(2)), true).unwrap();
        assert_eq!(model.y, node_set(&[1, 2, 3]));
        assert_eq!(model.d, node_set(&[1, 2, 4]));
        assert_eq!(model.additional, vec![n(1)]);
        assert_eq!(model.outputs, vec![n(3), n(1), n(2)]);
        assert_eq!(model.inputs_w[&n(1)], vec![n(2), n(4)]);
    }

    #[test]
    fn missing_target_input_is_rejected() {
        let spec = four_node_network();
        let err = build_predictor_model(&spec, (n(3), n(1)), &node_set(&[2, 3, 4]), Some(n(1)), false).unwrap_err();
        assert!(matches!(err, Error::MissingTargetInput(NodeId(1))));
    }

    #[test]
    fn unmeasured_confounder_is_reported() {
        let spec = four_node_network();
        let err = build_predictor_model(&spec, (n(3), n(1)), &node_set(&[1, 3, 4]), None, false).unwrap_err();
        assert!(matches!(err, Error::ConditionViolated { .. }), "{err}");
    }

    #[test]
    fn fully_measured_model_has_single_output() {
        let spec = four_node_network();
        let model = build_predictor_model(&spec, (n(3), n(1)), &node_set(&[1, 2, 3, 4]), None, false).unwrap();
        assert_eq!(model.outputs, vec![n(3)]);
        assert_eq!(model.d, node_set(&[1, 2, 4]));
        let direct = PredictorModel::direct(4, (n(3), n(1)), &[n(1), n(2), n(4)]).unwrap();
        assert_eq!(direct.inputs_w, model.inputs_w);
        assert_eq!(direct.inputs_u, model.inputs_u);
        assert_eq!(direct.outputs, model.outputs);
    }

    #[test]
    fn condition_one_report_for_direct_method() {
        let spec = four_node_network();
        let model = PredictorModel::direct(4, (n(3), n(1)), &[n(1), n(4)]).unwrap();
        let report = condition_report(&spec, &model).unwrap();
        assert!(!report.condition1.satisfied);
        assert!(report.condition1.witnesses.contains(&vec![n(1), n(2), n(3)]));
    }
}
