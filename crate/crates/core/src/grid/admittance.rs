use nalgebra::DMatrix;

use super::{Phasor, PhasorNetwork};
use crate::error::GridError;

/// Smallest fraction used when a fault sits exactly at a line end, so the
/// short segment between the bus and the fault node keeps a finite admittance.
pub(crate) const MIN_SEGMENT_FRACTION: f64 = 1e-6;

/// Nodal admittance of the passive branch network (lines and fault shunts).
///
/// Nodes `0..n_buses` are the buses; each active fault adds one virtual node
/// after them, in the order of `PhasorNetwork::faults`. Loads and source
/// impedances are not included here.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub n_buses: usize,
    pub y: DMatrix<Phasor>,
    /// `fault_nodes[k]` is the node index of `faults[k]`.
    pub fault_nodes: Vec<usize>,
}

impl AdmittanceMatrix {
    pub fn n_nodes(&self) -> usize {
        self.y.nrows()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.n_nodes();
        (0..n).all(|i| (0..n).all(|j| (self.y[(i, j)] - self.y[(j, i)]).norm() <= tol))
    }
}

pub(crate) fn stamp(y: &mut DMatrix<Phasor>, a: usize, b: usize, adm: Phasor) {
    y[(a, a)] += adm;
    y[(b, b)] += adm;
    y[(a, b)] -= adm;
    y[(b, a)] -= adm;
}

/// A two-terminal series element of the branch network.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Branch {
    pub line: usize,
    pub a: usize,
    pub b: usize,
    pub impedance: Phasor,
}

/// Energised series branches after applying breaker states and splitting
/// faulted lines at their fault node.
pub(crate) fn branches(network: &PhasorNetwork) -> Vec<Branch> {
    let n_buses = network.n_buses();
    let mut out = Vec::with_capacity(network.lines.len() + network.faults.len());
    for line in &network.lines {
        match network.faults.iter().position(|f| f.line == line.id) {
            None => {
                if line.is_closed() {
                    out.push(Branch {
                        line: line.id,
                        a: line.from_bus,
                        b: line.to_bus,
                        impedance: line.impedance,
                    });
                }
            }
            Some(k) => {
                let node = n_buses + k;
                let p = network.faults[k]
                    .position
                    .clamp(MIN_SEGMENT_FRACTION, 1.0 - MIN_SEGMENT_FRACTION);
                if line.breaker_from.is_closed() {
                    out.push(Branch {
                        line: line.id,
                        a: line.from_bus,
                        b: node,
                        impedance: line.impedance * p,
                    });
                }
                if line.breaker_to.is_closed() {
                    out.push(Branch {
                        line: line.id,
                        a: node,
                        b: line.to_bus,
                        impedance: line.impedance * (1.0 - p),
                    });
                }
            }
        }
    }
    out
}

/// Assembles the branch admittance matrix.
///
/// Source coverage is checked against the as-built topology (all breakers
/// closed): a bus group that could never be reached by a DER or grid tie is
/// a configuration error. Groups cut off at run time by breaker operations are
/// de-energised by [`super::solve_network`] instead.
pub fn build_admittance(network: &PhasorNetwork) -> Result<AdmittanceMatrix, GridError> {
    network.validate()?;
    check_source_coverage(network)?;

    let n_buses = network.n_buses();
    let n = n_buses + network.faults.len();
    let mut y = DMatrix::from_element(n, n, Phasor::new(0.0, 0.0));
    for br in branches(network) {
        stamp(&mut y, br.a, br.b, br.impedance.inv());
    }
    let mut fault_nodes = Vec::with_capacity(network.faults.len());
    for (k, fault) in network.faults.iter().enumerate() {
        let node = n_buses + k;
        y[(node, node)] += Phasor::new(fault.fault_type.severity() / fault.resistance, 0.0);
        fault_nodes.push(node);
    }
    Ok(AdmittanceMatrix { n_buses, y, fault_nodes })
}

fn check_source_coverage(network: &PhasorNetwork) -> Result<(), GridError> {
    let n = network.n_buses();
    let mut comp: Vec<usize> = (0..n).collect();
    fn find(comp: &mut [usize], mut i: usize) -> usize {
        while comp[i] != i {
            comp[i] = comp[comp[i]];
            i = comp[i];
        }
        i
    }
    for line in &network.lines {
        let (a, b) = (find(&mut comp, line.from_bus), find(&mut comp, line.to_bus));
        if a != b {
            comp[a] = b;
        }
    }
    let mut has_source = vec![false; n];
    for der in &network.ders {
        let r = find(&mut comp, der.bus);
        has_source[r] = true;
    }
    if let Some(grid) = &network.grid {
        let r = find(&mut comp, grid.bus);
        has_source[r] = true;
    }
    for root in 0..n {
        if find(&mut comp, root) == root && !has_source[root] {
            let buses: Vec<usize> = (0..n).filter(|&b| find(&mut comp, b) == root).collect();
            return Err(GridError::IslandWithoutSource { buses });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{presets, BreakerState, Bus, BusKind, DerUnit, FaultSpec, FaultType, Line};

    fn two_bus(r: f64, x: f64) -> PhasorNetwork {
        PhasorNetwork {
            buses: (0..2)
                .map(|id| Bus { id, kind: BusKind::Der, nominal_voltage: 415.0 })
                .collect(),
            lines: vec![Line::new(0, 0, 1, r, x)],
            ders: vec![DerUnit::new(0, 1e-4), DerUnit::new(1, 1e-4)],
            loads: vec![],
            grid: None,
            faults: vec![],
        }
    }

    fn c(re: f64, im: f64) -> Phasor {
        Phasor::new(re, im)
    }

    #[test]
    fn single_branch_identity() {
        let y = build_admittance(&two_bus(1.0, 0.0)).unwrap();
        assert_eq!(y.y[(0, 0)], c(1.0, 0.0));
        assert_eq!(y.y[(0, 1)], c(-1.0, 0.0));
        assert_eq!(y.y[(1, 0)], c(-1.0, 0.0));
        assert_eq!(y.y[(1, 1)], c(1.0, 0.0));
    }

    #[test]
    fn open_breaker_removes_branch() {
        let mut net = two_bus(1.0, 0.0);
        net.lines[0].breaker_from = BreakerState::Open;
        let y = build_admittance(&net).unwrap();
        assert!(y.y.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn ring3_off_diagonals() {
        let net = presets::preset("ring3").unwrap().network;
        let y = build_admittance(&net).unwrap();
        let expect = -c(0.7, 1.884).inv();
        assert!((y.y[(0, 1)] - expect).norm() < 1e-15);
        assert!((y.y[(0, 2)] + c(0.4, 6.154).inv()).norm() < 1e-15);
        assert!((y.y[(1, 2)] + c(1.4, 3.14).inv()).norm() < 1e-15);
        assert!(y.is_symmetric(0.0));
    }

    #[test]
    fn fault_adds_virtual_node_with_severity_scaled_shunt() {
        let mut net = two_bus(1.0, 2.0);
        net.faults.push(FaultSpec {
            line: 0,
            position: 0.25,
            fault_type: FaultType::AG,
            resistance: 0.5,
            t_start: 0.0,
            t_end: 1.0,
        });
        let y = build_admittance(&net).unwrap();
        assert_eq!(y.n_nodes(), 3);
        assert_eq!(y.fault_nodes, vec![2]);
        let seg1 = (c(1.0, 2.0) * 0.25).inv();
        let seg2 = (c(1.0, 2.0) * 0.75).inv();
        assert!((y.y[(0, 2)] + seg1).norm() < 1e-12);
        assert!((y.y[(1, 2)] + seg2).norm() < 1e-12);
        assert_eq!(y.y[(0, 1)], c(0.0, 0.0));
        let shunt = c(1.0 / 3.0 / 0.5, 0.0);
        assert!((y.y[(2, 2)] - (seg1 + seg2 + shunt)).norm() < 1e-12);
        assert!(y.is_symmetric(0.0));
    }

    #[test]
    fn island_without_source_is_rejected() {
        let mut net = two_bus(1.0, 0.0);
        net.buses.push(Bus { id: 2, kind: BusKind::Load, nominal_voltage: 415.0 });
        assert!(matches!(
            build_admittance(&net),
            Err(GridError::IslandWithoutSource { buses }) if buses == vec![2]
        ));
    }
}
