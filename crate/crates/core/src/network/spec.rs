//! Ground-truth network description and its TOML document format.
//!
//! ```toml
//! nodes = 4
//!
//! [[modules]]          # G_{to,from}
//! from = 1
//! to = 3
//! num = [0.0, 1.0, 0.05]
//! den = [1.0, 1.0, 0.6]
//!
//! [[noise]]            # v_node = H e_node, var(e_node) = variance
//! node = 1
//! num = [1.0]
//! den = [1.0, 0.2]
//! variance = 0.05
//!
//! [[excitations]]      # u_node += R r_signal
//! node = 2
//! signal = 1
//! num = [1.0]
//! den = [1.0]
//! ```
//!
//! Coefficients are listed low order first in `q^{-1}`. Node and signal
//! indices are 1-based. Nodes without a `[[noise]]` entry are noise free.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tf::TransferFunction;

/// 1-based node label, as in `w_1, ..., w_L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 - 1
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

pub type NodeSet = BTreeSet<NodeId>;

pub fn node_set(ids: &[usize]) -> NodeSet {
    ids.iter().copied().map(NodeId).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub filter: TransferFunction,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    node_count: usize,
    /// `(to, from) -> G_{to,from}`.
    modules: BTreeMap<(NodeId, NodeId), TransferFunction>,
    noise: BTreeMap<NodeId, NoiseModel>,
    /// `(node, signal) -> R_{node,signal}`; signals are 1-based.
    excitations: BTreeMap<(NodeId, usize), TransferFunction>,
    signal_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    nodes: usize,
    #[serde(default)]
    modules: Vec<ModuleDoc>,
    #[serde(default)]
    noise: Vec<NoiseDoc>,
    #[serde(default)]
    excitations: Vec<ExcitationDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModuleDoc {
    from: usize,
    to: usize,
    num: Vec<f64>,
    den: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseDoc {
    node: usize,
    num: Vec<f64>,
    den: Vec<f64>,
    variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExcitationDoc {
    node: usize,
    signal: usize,
    num: Vec<f64>,
    den: Vec<f64>,
}

/// Parses and validates a network document.
pub fn parse_network_spec(text: &str) -> Result<NetworkSpec> {
    let doc: NetworkDoc = toml::from_str(text).map_err(|e| Error::malformed(e.message().to_string()))?;
    NetworkSpec::from_doc(doc)
}

impl NetworkSpec {
    /// Empty network with `node_count` nodes and no edges, noise or excitation.
    pub fn empty(node_count: usize) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::malformed("network must have at least one node"));
        }
        Ok(NetworkSpec {
            node_count,
            modules: BTreeMap::new(),
            noise: BTreeMap::new(),
            excitations: BTreeMap::new(),
            signal_count: 0,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn signal_count(&self) -> usize {
        self.signal_count
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (1..=self.node_count).map(NodeId)
    }

    pub fn check_node(&self, node: NodeId) -> Result<()> {
        if node.0 == 0 || node.0 > self.node_count {
            Err(Error::InvalidNode { node: node.0, count: self.node_count })
        } else {
            Ok(())
        }
    }

    pub fn check_nodes<'a>(&self, nodes: impl IntoIterator<Item = &'a NodeId>) -> Result<()> {
        nodes.into_iter().try_for_each(|&n| self.check_node(n))
    }

    /// Module `G_{to,from}`, if present.
    pub fn module(&self, to: NodeId, from: NodeId) -> Option<&TransferFunction> {
        self.modules.get(&(to, from))
    }

    pub fn modules(&self) -> impl Iterator<Item = ((NodeId, NodeId), &TransferFunction)> {
        self.modules.iter().map(|(&k, v)| (k, v))
    }

    pub fn module_count(&self) -> usize {
        self.modules.len()
    }

    pub fn noise(&self, node: NodeId) -> Option<&NoiseModel> {
        self.noise.get(&node)
    }

    pub fn noise_variance(&self, node: NodeId) -> f64 {
        self.noise.get(&node).map_or(0.0, |n| n.variance)
    }

    pub fn excitations(&self) -> impl Iterator<Item = ((NodeId, usize), &TransferFunction)> {
        self.excitations.iter().map(|(&k, v)| (k, v))
    }

    /// Nodes that receive a nonzero excitation `u_node`.
    pub fn excited_nodes(&self) -> NodeSet {
        self.excitations.keys().map(|&(n, _)| n).collect()
    }

    /// Direct successors of `node` (nodes `k` with a module `G_{k,node}`).
    pub fn successors(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.modules.keys().filter(move |&&(_, from)| from == node).map(|&(to, _)| to)
    }

    /// Direct predecessors of `node` (its w-in-neighbours).
    pub fn predecessors(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.modules.keys().filter(move |&&(to, _)| to == node).map(|&(_, from)| from)
    }

    pub fn add_module(&mut self, to: NodeId, from: NodeId, tf: TransferFunction) -> Result<()> {
        self.check_node(to)?;
        self.check_node(from)?;
        if to == from {
            return Err(Error::SelfLoop(to));
        }
        let what = format!("G_{}{}", to.0, from.0);
        tf.check_monic(&what)?;
        if !tf.is_strictly_proper() {
            return Err(Error::NotStrictlyProper(what));
        }
        tf.check_stable(&what)?;
        if self.modules.insert((to, from), tf).is_some() {
            return Err(Error::malformed(format!("duplicate module {what}")));
        }
        Ok(())
    }

    pub fn set_noise(&mut self, node: NodeId, filter: TransferFunction, variance: f64) -> Result<()> {
        self.check_node(node)?;
        let what = format!("H_{}", node.0);
        filter.check_monic(&what)?;
        if filter.num[0] != 1.0 {
            return Err(Error::malformed(format!("{what}: noise model must be monic (num[0] = 1)")));
        }
        filter.check_stable(&what)?;
        let zeros = crate::tf::poly_root_radius(&filter.num);
        if !(zeros < 1.0) {
            return Err(Error::Unstable { what: format!("{what} inverse (non-minimum-phase)"), magnitude: zeros });
        }
        if !(variance.is_finite() && variance >= 0.0) {
            return Err(Error::malformed(format!("{what}: variance must be finite and >= 0")));
        }
        self.noise.insert(node, NoiseModel { filter, variance });
        Ok(())
    }

    pub fn add_excitation(&mut self, node: NodeId, signal: usize, tf: TransferFunction) -> Result<()> {
        self.check_node(node)?;
        if signal == 0 {
            return Err(Error::malformed("excitation signal indices are 1-based"));
        }
        let what = format!("R_{}{}", node.0, signal);
        tf.check_monic(&what)?;
        tf.check_stable(&what)?;
        if self.excitations.insert((node, signal), tf).is_some() {
            return Err(Error::malformed(format!("duplicate excitation {what}")));
        }
        self.signal_count = self.signal_count.max(signal);
        Ok(())
    }

    /// Replaces the noise variances, keeping the noise filters.
    pub fn with_noise_variances(&self, variances: &[f64]) -> Result<Self> {
        if variances.len() != self.node_count {
            return Err(Error::dim(format!(
                "{} noise variances for {} nodes",
                variances.len(),
                self.node_count
            )));
        }
        let mut out = self.clone();
        for (k, &v) in variances.iter().enumerate() {
            let node = NodeId(k + 1);
            let filter = out.noise.get(&node).map_or_else(TransferFunction::unit, |n| n.filter.clone());
            out.set_noise(node, filter, v)?;
        }
        Ok(out)
    }

    fn from_doc(doc: NetworkDoc) -> Result<Self> {
        let mut spec = NetworkSpec::empty(doc.nodes)?;
        for m in doc.modules {
            let tf = TransferFunction { num: m.num, den: m.den };
            spec.add_module(NodeId(m.to), NodeId(m.from), tf)?;
        }
        for n in doc.noise {
            let node = NodeId(n.node);
            if spec.noise.contains_key(&node) {
                return Err(Error::malformed(format!("duplicate noise entry for node {}", n.node)));
            }
            spec.set_noise(node, TransferFunction { num: n.num, den: n.den }, n.variance)?;
        }
        for x in doc.excitations {
            spec.add_excitation(NodeId(x.node), x.signal, TransferFunction { num: x.num, den: x.den })?;
        }
        Ok(spec)
    }

    fn to_doc(&self) -> NetworkDoc {
        NetworkDoc {
            nodes: self.node_count,
            modules: self
                .modules
                .iter()
                .map(|(&(to, from), tf)| ModuleDoc { from: from.0, to: to.0, num: tf.num.clone(), den: tf.den.clone() })
                .collect(),
            noise: self
                .noise
                .iter()
                .map(|(&node, n)| NoiseDoc {
                    node: node.0,
                    num: n.filter.num.clone(),
                    den: n.filter.den.clone(),
                    variance: n.variance,
                })
                .collect(),
            excitations: self
                .excitations
                .iter()
                .map(|(&(node, signal), tf)| ExcitationDoc {
                    node: node.0,
                    signal,
                    num: tf.num.clone(),
                    den: tf.den.clone(),
                })
                .collect(),
        }
    }

    /// Canonical TOML rendering; `parse_network_spec` inverts it exactly.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_doc()).expect("network document always serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn four_node_document_parses() {
        let spec = parse_network_spec(presets::FOUR_NODE_TOML).unwrap();
        assert_eq!(spec.node_count(), 4);
        assert_eq!(spec.module_count(), 7);
        assert_eq!(spec.signal_count(), 2);
        assert_eq!(spec, presets::four_node_network());
    }

    #[test]
    fn self_loop_is_rejected() {
        let doc = "nodes = 2\n[[modules]]\nfrom = 2\nto = 2\nnum = [0.0, 0.5]\nden = [1.0]\n";
        assert!(matches!(parse_network_spec(doc), Err(Error::SelfLoop(NodeId(2)))));
    }

    #[test]
    fn unstable_module_is_rejected() {
        let doc = "nodes = 2\n[[modules]]\nfrom = 1\nto = 2\nnum = [0.0, 1.0]\nden = [1.0, -1.5]\n";
        assert!(matches!(parse_network_spec(doc), Err(Error::Unstable { .. })));
    }

    #[test]
    fn non_monic_denominator_is_rejected() {
        let doc = "nodes = 2\n[[modules]]\nfrom = 1\nto = 2\nnum = [0.0, 1.0]\nden = [2.0, 0.5]\n";
        assert!(matches!(parse_network_spec(doc), Err(Error::NonMonic { .. })));
    }

    #[test]
    fn malformed_documents_are_rejected() {
        for doc in [
            "",
            "nodes = 0",
            "nodes = 2\nbogus = 1",
            "nodes = 2\n[[modules]]\nfrom = 1\nto = 5\nnum = [0.0, 1.0]\nden = [1.0]\n",
            "nodes = 2\n[[modules]]\nfrom = 1\nto = 2\nnum = [1.0]\nden = [1.0]\n",
            "nodes = 2\n[[noise]]\nnode = 1\nnum = [1.0]\nden = [1.0]\nvariance = -1.0\n",
            "nodes = 2\n[[excitations]]\nnode = 1\nsignal = 0\nnum = [1.0]\nden = [1.0]\n",
        ] {
            assert!(parse_network_spec(doc).is_err(), "accepted: {doc:?}");
        }
    }

    #[test]
    fn rendering_is_a_fixed_point() {
        let text = presets::four_node_network().to_toml();
        let again = parse_network_spec(&text).unwrap().to_toml();
        assert_eq!(text, again);
    }
}
