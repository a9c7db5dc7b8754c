//! The four-node benchmark network used throughout the tests and experiments.
//!
//! Target module `G_31`, missing node `w_2`, additional node `w_1`. External
//! signal 1 drives node 2 and external signal 2 drives node 4.

use crate::network::{parse_network_spec, NetworkSpec, NodeId};
use crate::tf::TransferFunction;

pub const FOUR_NODE_TOML: &str = include_str!("../data/four_node.toml");

pub const TARGET: (NodeId, NodeId) = (NodeId(3), NodeId(1));
pub const MISSING: NodeId = NodeId(2);
pub const MEASURED: [usize; 3] = [1, 3, 4];

/// Order of the target numerator (`n_b`) and denominator (`n_a`).
pub const TARGET_ORDERS: (usize, usize) = (2, 2);

pub fn four_node_network() -> NetworkSpec {
    parse_network_spec(FOUR_NODE_TOML).expect("bundled network is valid")
}

pub fn target_module() -> TransferFunction {
    TransferFunction { num: vec![0.0, 1.0, 0.05], den: vec![1.0, 1.0, 0.6] }
}

/// `[b_1, b_2, a_1, a_2]` of the true target module.
pub fn target_theta() -> Vec<f64> {
    vec![1.0, 0.05, 1.0, 0.6]
}
