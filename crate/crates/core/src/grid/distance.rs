use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{DerUnit, FaultSpec, PhasorNetwork};
use crate::error::GridError;

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Undirected weighted adjacency over buses plus one fault node (index
/// `n_buses`), with the faulted line split at the fault position. Every line
/// is included regardless of breaker state.
fn graph(network: &PhasorNetwork, fault: &FaultSpec) -> Vec<Vec<(usize, f64)>> {
    let n = network.n_buses();
    let fnode = n;
    let mut adj = vec![Vec::new(); n + 1];
    for line in &network.lines {
        let w = line.impedance.norm();
        if line.id == fault.line {
            adj[line.from_bus].push((fnode, w * fault.position));
            adj[fnode].push((line.from_bus, w * fault.position));
            adj[line.to_bus].push((fnode, w * (1.0 - fault.position)));
            adj[fnode].push((line.to_bus, w * (1.0 - fault.position)));
        } else {
            adj[line.from_bus].push((line.to_bus, w));
            adj[line.to_bus].push((line.from_bus, w));
        }
    }
    adj
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Entry { dist: 0.0, node: source });
    while let Some(Entry { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        for &(next, w) in &adj[node] {
            let nd = d + w;
            if nd < dist[next] {
                dist[next] = nd;
                heap.push(Entry { dist: nd, node: next });
            }
        }
    }
    dist
}

/// Impedance magnitude of the least-|Z| series path from the DER's bus to
/// the fault point.
pub fn electrical_distance(network: &PhasorNetwork, der: &DerUnit, fault: &FaultSpec) -> Result<f64, GridError> {
    if fault.line >= network.lines.len() || der.bus >= network.n_buses() {
        return Err(GridError::Invalid("fault or DER references a missing element".into()));
    }
    let adj = graph(network, fault);
    let d = dijkstra(&adj, der.bus)[network.n_buses()];
    if d.is_finite() {
        Ok(d)
    } else {
        Err(GridError::Unreachable { bus: der.bus })
    }
}

/// Distance from every DER to the fault, in DER order.
pub fn fault_point_distances(network: &PhasorNetwork, fault: &FaultSpec) -> Result<Vec<f64>, GridError> {
    network
        .ders
        .iter()
        .map(|d| electrical_distance(network, d, fault))
        .collect()
}
