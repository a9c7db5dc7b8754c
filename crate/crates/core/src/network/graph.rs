//! Path, loop and confounder queries on the network topology.
//!
//! A path "passes through" a set when one of its intermediate nodes is in the
//! set. Endpoints never count, so a direct edge is always unblocked.

use std::collections::VecDeque;

use super::spec::{NetworkSpec, NodeId, NodeSet};
use crate::error::{Error, Result};

/// Maximum number of witnesses collected by the parallel-path check.
const MAX_WITNESSES: usize = 8;

/// A directed edge `from -> to` (the module `G_{to,from}`).
pub type Edge = (NodeId, NodeId);

fn reachable(
    spec: &NetworkSpec,
    from: NodeId,
    to: NodeId,
    blockers: &NodeSet,
    skip_edge: Option<Edge>,
) -> bool {
    let mut seen = vec![false; spec.node_count()];
    seen[from.index()] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(node) = queue.pop_front() {
        for next in spec.successors(node) {
            if skip_edge == Some((node, next)) {
                continue;
            }
            if next == to {
                return true;
            }
            if seen[next.index()] || blockers.contains(&next) {
                continue;
            }
            seen[next.index()] = true;
            queue.push_back(next);
        }
    }
    false
}

/// True iff a directed path `from -> ... -> to` exists whose intermediate
/// nodes all avoid `blockers`.
pub fn has_unmeasured_path(spec: &NetworkSpec, from: NodeId, to: NodeId, blockers: &NodeSet) -> Result<bool> {
    has_unmeasured_path_excluding(spec, from, to, blockers, None)
}

/// As [`has_unmeasured_path`], ignoring the edge `skip_edge = (from, to)`.
pub fn has_unmeasured_path_excluding(
    spec: &NetworkSpec,
    from: NodeId,
    to: NodeId,
    blockers: &NodeSet,
    skip_edge: Option<Edge>,
) -> Result<bool> {
    spec.check_node(from)?;
    spec.check_node(to)?;
    spec.check_nodes(blockers)?;
    if from == to {
        return Err(Error::invalid(format!("path endpoints coincide ({from})")));
    }
    Ok(reachable(spec, from, to, blockers, skip_edge))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelPathReport {
    pub satisfied: bool,
    /// Offending paths `i -> ... -> j` and loops `j -> ... -> j`, as node lists.
    pub witnesses: Vec<Vec<NodeId>>,
}

impl ParallelPathReport {
    pub fn describe_witness(path: &[NodeId]) -> String {
        path.iter().map(|n| n.0.to_string()).collect::<Vec<_>>().join("->")
    }
}

/// Checks that every path `i -> j` other than the direct edge and every loop
/// through `j` passes through a node of `blocking`.
pub fn check_parallel_path_loop(
    spec: &NetworkSpec,
    target: (NodeId, NodeId),
    blocking: &NodeSet,
) -> Result<ParallelPathReport> {
    let (j, i) = target;
    spec.check_node(j)?;
    spec.check_node(i)?;
    spec.check_nodes(blocking)?;
    if spec.module(j, i).is_none() {
        return Err(Error::MissingModule(format!("G_{}{}", j.0, i.0)));
    }
    let mut witnesses = Vec::new();
    collect_paths(spec, i, j, blocking, Some((i, j)), &mut witnesses);
    collect_paths(spec, j, j, blocking, None, &mut witnesses);
    Ok(ParallelPathReport { satisfied: witnesses.is_empty(), witnesses })
}

/// Depth-first enumeration of simple unblocked paths (or cycles when
/// `from == to`), stopping after `MAX_WITNESSES`.
fn collect_paths(
    spec: &NetworkSpec,
    from: NodeId,
    to: NodeId,
    blocking: &NodeSet,
    skip_edge: Option<Edge>,
    out: &mut Vec<Vec<NodeId>>,
) {
    fn walk(
        spec: &NetworkSpec,
        path: &mut Vec<NodeId>,
        on_path: &mut [bool],
        to: NodeId,
        blocking: &NodeSet,
        skip_edge: Option<Edge>,
        out: &mut Vec<Vec<NodeId>>,
    ) {
        let node = *path.last().unwrap();
        let next: Vec<NodeId> = spec.successors(node).collect();
        for n in next {
            if out.len() >= MAX_WITNESSES {
                return;
            }
            if skip_edge == Some((node, n)) {
                continue;
            }
            if n == to {
                let mut p = path.clone();
                p.push(n);
                out.push(p);
                continue;
            }
            if on_path[n.index()] || blocking.contains(&n) {
                continue;
            }
            on_path[n.index()] = true;
            path.push(n);
            walk(spec, path, on_path, to, blocking, skip_edge, out);
            path.pop();
            on_path[n.index()] = false;
        }
    }
    let mut on_path = vec![false; spec.node_count()];
    on_path[from.index()] = true;
    on_path[to.index()] = true;
    let mut path = vec![from];
    walk(spec, &mut path, &mut on_path, to, blocking, skip_edge, out);
}

/// Whether noise `e_l` (entering node `l`) reaches some node of `targets`
/// without passing through `conditioning`.
fn noise_reaches(spec: &NetworkSpec, l: NodeId, targets: &NodeSet, conditioning: &NodeSet) -> bool {
    if targets.contains(&l) {
        return true;
    }
    if conditioning.contains(&l) {
        return false;
    }
    let mut seen = vec![false; spec.node_count()];
    seen[l.index()] = true;
    let mut queue = VecDeque::from([l]);
    while let Some(node) = queue.pop_front() {
        for next in spec.successors(node) {
            if targets.contains(&next) {
                return true;
            }
            if seen[next.index()] || conditioning.contains(&next) {
                continue;
            }
            seen[next.index()] = true;
            queue.push_back(next);
        }
    }
    false
}

/// Noise sources `e_l` with simultaneous unblocked paths to `set_x` and
/// `set_xp` given `conditioning`. Returned as the entry nodes `l`, ascending.
///
/// A noise source is present when the node has a noise entry with positive
/// variance. The entry node itself counts as on the path, so conditioning on
/// it blocks the source unless it is itself one of the endpoints.
pub fn find_confounders(
    spec: &NetworkSpec,
    set_x: &NodeSet,
    set_xp: &NodeSet,
    conditioning: &NodeSet,
) -> Result<Vec<NodeId>> {
    spec.check_nodes(set_x)?;
    spec.check_nodes(set_xp)?;
    spec.check_nodes(conditioning)?;
    Ok(spec
        .nodes()
        .filter(|&l| spec.noise_variance(l) > 0.0)
        .filter(|&l| noise_reaches(spec, l, set_x, conditioning) && noise_reaches(spec, l, set_xp, conditioning))
        .collect())
}
