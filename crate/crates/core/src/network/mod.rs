//! Network description, topology queries and predictor-model construction.

mod graph;
mod predictor;
mod spec;

pub use graph::{
    check_parallel_path_loop, find_confounders, has_unmeasured_path, has_unmeasured_path_excluding, Edge,
    ParallelPathReport,
};
pub use predictor::{build_predictor_model, condition_report, ConditionReport, PredictorModel};
pub use spec::{node_set, parse_network_spec, NetworkSpec, NodeId, NodeSet, NoiseModel};
