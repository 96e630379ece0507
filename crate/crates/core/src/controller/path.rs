//! Least-traffic routing over switches and link-disjoint recovery paths.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use super::ControllerError;
use crate::simnet::topology::{LinkId, NodeId, NodeKind, Topology};
use crate::time::SimTime;

/// Path label: summed utilization, then hop count, then link ids in order.
#[derive(Debug, Clone, PartialEq)]
struct Label {
    cost: f64,
    links: Vec<LinkId>,
}

impl Label {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.links.len().cmp(&other.links.len()))
            .then_with(|| self.links.cmp(&other.links))
    }
}

struct Entry {
    node: NodeId,
    label: Label,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .label
            .key_cmp(&self.label)
            .then(other.node.cmp(&self.node))
    }
}

/// Links and nodes a path search must not use.
#[derive(Debug, Clone, Default)]
pub struct Exclusions {
    pub links: HashSet<LinkId>,
    pub nodes: HashSet<NodeId>,
}

/// Path of link ids from `src` to `dst` minimizing the summed utilization of
/// the last monitoring window, with ties broken by hop count and then by the
/// lexicographic order of link ids. Failed links are never used and only
/// switches act as transit nodes.
pub fn compute_least_traffic_path(
    topo: &Topology,
    src: NodeId,
    dst: NodeId,
    window: SimTime,
) -> Result<Vec<LinkId>, ControllerError> {
    least_traffic_path_excluding(topo, src, dst, window, &Exclusions::default())
}

pub fn least_traffic_path_excluding(
    topo: &Topology,
    src: NodeId,
    dst: NodeId,
    window: SimTime,
    ex: &Exclusions,
) -> Result<Vec<LinkId>, ControllerError> {
    if src == dst {
        return Ok(Vec::new());
    }
    let n = topo.nodes().len();
    let mut best: Vec<Option<Label>> = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    let start = Label {
        cost: 0.0,
        links: Vec::new(),
    };
    best[src.0 as usize] = Some(start.clone());
    heap.push(Entry {
        node: src,
        label: start,
    });
    while let Some(Entry { node, label }) = heap.pop() {
        let idx = node.0 as usize;
        if done[idx] {
            continue;
        }
        done[idx] = true;
        if node == dst {
            return Ok(label.links);
        }
        if node != src && topo.node(node).kind != NodeKind::Switch {
            continue;
        }
        for &l in topo.adjacency(node) {
            let link = topo.link(l);
            if !link.alive || ex.links.contains(&l) {
                continue;
            }
            let next = link.other(node);
            if done[next.0 as usize] || (next != dst && ex.nodes.contains(&next)) {
                continue;
            }
            let mut links = label.links.clone();
            links.push(l);
            let cand = Label {
                cost: label.cost + topo.utilization(l, window),
                links,
            };
            let slot = &mut best[next.0 as usize];
            if slot
                .as_ref()
                .is_none_or(|b| cand.key_cmp(b) == Ordering::Less)
            {
                *slot = Some(cand.clone());
                heap.push(Entry {
                    node: next,
                    label: cand,
                });
            }
        }
    }
    Err(ControllerError::Disconnected {
        from: topo.node(src).name.clone(),
        to: topo.node(dst).name.clone(),
    })
}

/// Working path plus a recovery path sharing no link and no intermediate
/// node with it.
pub fn disjoint_pair(
    topo: &Topology,
    src: NodeId,
    dst: NodeId,
    window: SimTime,
) -> Result<(Vec<LinkId>, Vec<LinkId>), ControllerError> {
    let wp = compute_least_traffic_path(topo, src, dst, window)?;
    let mut ex = Exclusions::default();
    ex.links.extend(wp.iter().copied());
    let nodes = topo.path_nodes(src, &wp);
    ex.nodes
        .extend(nodes[1..nodes.len().saturating_sub(1)].iter().copied());
    match least_traffic_path_excluding(topo, src, dst, window, &ex) {
        Ok(rp) if !rp.is_empty() => Ok((wp, rp)),
        _ => Err(ControllerError::NoDisjointPath {
            from: topo.node(src).name.clone(),
            to: topo.node(dst).name.clone(),
        }),
    }
}

/// True when `path` walks from `src` without revisiting a node.
pub fn is_loop_free(topo: &Topology, src: NodeId, path: &[LinkId]) -> bool {
    let mut cur = src;
    let mut seen = HashSet::from([src]);
    for &l in path {
        let link = topo.link(l);
        if !link.touches(cur) {
            return false;
        }
        cur = link.other(cur);
        if !seen.insert(cur) {
            return false;
        }
    }
    true
}
