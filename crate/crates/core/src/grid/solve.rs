use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::admittance::{branches, stamp, Branch};
use super::{DerUnit, Phasor, PhasorNetwork};
use crate::error::GridError;

const MAX_DISPATCH_ITERS: usize = 60;
const MAX_LIMIT_ITERS: usize = 200;

/// Source EMFs chosen by droop power sharing on the fault-free network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    pub der_emf: Vec<Phasor>,
    pub grid_emf: Option<Phasor>,
}

/// Currents at both ends of a line, each flowing from the bus into the line.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LineFlow {
    pub from_end: Phasor,
    pub to_end: Phasor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusSolution {
    pub bus_voltages: Vec<Phasor>,
    pub fault_voltages: Vec<Phasor>,
    pub line_currents: Vec<LineFlow>,
    pub der_buses: Vec<usize>,
    /// Current injected by each DER into its bus.
    pub der_currents: Vec<Phasor>,
    /// Three-phase active power delivered at each DER terminal, in watts.
    pub der_injections: Vec<f64>,
    pub der_limited: Vec<bool>,
    pub grid_current: Option<Phasor>,
    pub grid_injection: Option<f64>,
}

/// Splits `total_load` across DERs in inverse proportion to their droop coefficients.
pub fn share_power(ders: &[DerUnit], total_load: f64) -> Result<Vec<f64>, GridError> {
    if ders.is_empty() {
        return Err(GridError::IslandWithoutSource { buses: Vec::new() });
    }
    if let Some(d) = ders.iter().find(|d| !(d.droop_coeff > 0.0)) {
        return Err(GridError::Invalid(format!("droop coefficient {} must be positive", d.droop_coeff)));
    }
    let weights: Vec<f64> = ders.iter().map(|d| 1.0 / d.droop_coeff).collect();
    let sum: f64 = weights.iter().sum();
    Ok(weights.iter().map(|w| total_load * w / sum).collect())
}

/// Saturates a reference current at `i_max`, keeping its phase.
pub fn limit_current(i_ref: Phasor, i_max: f64) -> Phasor {
    let mag = i_ref.norm();
    if mag <= i_max {
        i_ref
    } else {
        i_ref * (i_max / mag)
    }
}

/// How each DER drives the network during one linear solve.
#[derive(Debug, Clone, Copy)]
enum SourceMode {
    Emf(Phasor),
    Current(Phasor),
}

struct Linear {
    /// Node voltages; de-energised nodes are zero.
    voltages: Vec<Phasor>,
    branches: Vec<Branch>,
}

fn union_find_root(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Connected components of the energised branch graph; returns each node's root.
fn components(n_nodes: usize, branches: &[Branch]) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n_nodes).collect();
    for br in branches {
        let (a, b) = (union_find_root(&mut parent, br.a), union_find_root(&mut parent, br.b));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    (0..n_nodes).map(|i| union_find_root(&mut parent, i)).collect()
}

fn solve_linear(
    network: &PhasorNetwork,
    modes: &[SourceMode],
    grid_emf: Option<Phasor>,
) -> Result<Linear, GridError> {
    let n_buses = network.n_buses();
    let n_nodes = n_buses + network.faults.len();
    let branches = branches(network);
    let roots = components(n_nodes, &branches);

    let mut live_root = vec![false; n_nodes];
    for der in &network.ders {
        live_root[roots[der.bus]] = true;
    }
    if let Some(grid) = &network.grid {
        live_root[roots[grid.bus]] = true;
    }
    let mut index = vec![usize::MAX; n_nodes];
    let mut m = 0;
    for node in 0..n_nodes {
        if live_root[roots[node]] {
            index[node] = m;
            m += 1;
        }
    }

    let zero = Phasor::new(0.0, 0.0);
    let mut y = DMatrix::from_element(m, m, zero);
    let mut rhs = DVector::from_element(m, zero);
    for br in &branches {
        if index[br.a] != usize::MAX {
            stamp(&mut y, index[br.a], index[br.b], br.impedance.inv());
        }
    }
    for (k, fault) in network.faults.iter().enumerate() {
        let i = index[n_buses + k];
        if i != usize::MAX {
            y[(i, i)] += Phasor::new(fault.fault_type.severity() / fault.resistance, 0.0);
        }
    }
    for load in &network.loads {
        let i = index[load.bus];
        if i != usize::MAX {
            y[(i, i)] += load.admittance(network.buses[load.bus].nominal_voltage);
        }
    }
    for (der, mode) in network.ders.iter().zip(modes) {
        let i = index[der.bus];
        match *mode {
            SourceMode::Emf(e) => {
                let ys = der.source_impedance.inv();
                y[(i, i)] += ys;
                rhs[i] += e * ys;
            }
            SourceMode::Current(c) => rhs[i] += c,
        }
    }
    if let (Some(grid), Some(e)) = (&network.grid, grid_emf) {
        let i = index[grid.bus];
        let yg = grid.impedance.inv();
        y[(i, i)] += yg;
        rhs[i] += e * yg;
    }

    let x = if m == 0 {
        DVector::from_element(0, zero)
    } else {
        y.lu().solve(&rhs).ok_or(GridError::SingularNetwork)?
    };
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(GridError::SingularNetwork);
    }
    let voltages = (0..n_nodes)
        .map(|node| if index[node] == usize::MAX { zero } else { x[index[node]] })
        .collect();
    Ok(Linear { voltages, branches })
}

fn der_current(der: &DerUnit, mode: SourceMode, v_bus: Phasor) -> Phasor {
    match mode {
        SourceMode::Emf(e) => (e - v_bus) / der.source_impedance,
        SourceMode::Current(c) => c,
    }
}

fn three_phase_power(v: Phasor, i: Phasor) -> f64 {
    3.0 * (v * i.conj()).re
}

/// Nominal per-phase EMF magnitude of each DER.
fn emf_magnitudes(network: &PhasorNetwork) -> Vec<f64> {
    network
        .ders
        .iter()
        .map(|d| network.buses[d.bus].nominal_phase_voltage())
        .collect()
}

/// Droop power sharing on the fault-free network.
///
/// Each energised island has one angle reference: the grid tie if present,
/// otherwise its lowest-index DER. The remaining DER angles are found by
/// Newton iteration so that every DER delivers its inverse-droop share of the
/// island total (the island's DER output when islanded, its load when grid-tied).
pub fn dispatch(network: &PhasorNetwork) -> Result<Dispatch, GridError> {
    let healthy = network.without_faults();
    let n_der = healthy.ders.len();
    let mags = emf_magnitudes(&healthy);
    let grid_emf = healthy.grid.as_ref().map(|g| {
        Phasor::new(healthy.buses[g.bus].nominal_phase_voltage() * g.voltage_scale, 0.0)
    });

    let roots = components(healthy.n_buses(), &branches(&healthy));
    let grid_root = healthy.grid.as_ref().map(|g| roots[g.bus]);

    // Group DERs by island.
    let mut islands: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, der) in healthy.ders.iter().enumerate() {
        let r = roots[der.bus];
        match islands.iter_mut().find(|(root, _)| *root == r) {
            Some((_, members)) => members.push(i),
            None => islands.push((r, vec![i])),
        }
    }
    struct Island {
        root: usize,
        members: Vec<usize>,
        shares: Vec<f64>,
        grid_tied: bool,
    }
    let mut isl = Vec::new();
    let mut unknowns = Vec::new();
    for (root, members) in islands {
        let units: Vec<DerUnit> = members.iter().map(|&i| healthy.ders[i].clone()).collect();
        let shares = share_power(&units, 1.0)?;
        let grid_tied = grid_root == Some(root);
        let skip = usize::from(!grid_tied);
        unknowns.extend(members.iter().skip(skip).copied());
        isl.push(Island { root, members, shares, grid_tied });
    }

    let emfs_for = |theta: &[f64]| -> Vec<Phasor> {
        let mut angles = vec![0.0; n_der];
        for (k, &d) in unknowns.iter().enumerate() {
            angles[d] = theta[k];
        }
        (0..n_der).map(|i| Phasor::from_polar(mags[i], angles[i])).collect()
    };
    let residual = |theta: &[f64]| -> Result<(Vec<f64>, f64), GridError> {
        let emfs = emfs_for(theta);
        let modes: Vec<SourceMode> = emfs.iter().map(|&e| SourceMode::Emf(e)).collect();
        let lin = solve_linear(&healthy, &modes, grid_emf)?;
        let p: Vec<f64> = healthy
            .ders
            .iter()
            .zip(&modes)
            .map(|(d, &m)| {
                let v = lin.voltages[d.bus];
                three_phase_power(v, der_current(d, m, v))
            })
            .collect();
        let mut r = vec![0.0; unknowns.len()];
        let mut scale: f64 = 1.0;
        for island in &isl {
            let total = if island.grid_tied {
                healthy
                    .loads
                    .iter()
                    .filter(|l| roots[l.bus] == island.root)
                    .map(|l| {
                        let v = lin.voltages[l.bus];
                        let yl = l.admittance(healthy.buses[l.bus].nominal_voltage);
                        three_phase_power(v, v * yl)
                    })
                    .sum::<f64>()
            } else {
                island.members.iter().map(|&i| p[i]).sum::<f64>()
            };
            scale = scale.max(total.abs());
            for (&i, &s) in island.members.iter().zip(&island.shares) {
                if let Some(k) = unknowns.iter().position(|&u| u == i) {
                    r[k] = p[i] - s * total;
                }
            }
        }
        Ok((r, scale))
    };

    let mut theta = vec![0.0; unknowns.len()];
    if !unknowns.is_empty() {
        let mut converged = false;
        for _ in 0..MAX_DISPATCH_ITERS {
            let (r, scale) = residual(&theta)?;
            let worst = r.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
            if worst <= 1e-10 * scale {
                converged = true;
                break;
            }
            let n = theta.len();
            let h = 1e-7;
            let mut jac = DMatrix::<f64>::zeros(n, n);
            for col in 0..n {
                let mut t2 = theta.clone();
                t2[col] += h;
                let (r2, _) = residual(&t2)?;
                for row in 0..n {
                    jac[(row, col)] = (r2[row] - r[row]) / h;
                }
            }
            let step = jac
                .lu()
                .solve(&DVector::from_vec(r.iter().map(|v| -v).collect()))
                .ok_or_else(|| GridError::SolveFailure("singular dispatch Jacobian".into()))?;
            for (t, s) in theta.iter_mut().zip(step.iter()) {
                // Keep individual updates small enough that the iteration cannot jump branches.
                *t += s.clamp(-0.5, 0.5);
            }
        }
        if !converged {
            return Err(GridError::SolveFailure("droop dispatch did not converge".into()));
        }
    }
    Ok(Dispatch {
        der_emf: emfs_for(&theta),
        grid_emf,
    })
}

/// Solves the network with the faults active at time `t`.
pub fn solve_network(network: &PhasorNetwork, t: f64) -> Result<BusSolution, GridError> {
    let mut active = network.clone();
    active.faults.retain(|f| f.is_active(t));
    solve_with_dispatch(&active, &dispatch(&active)?)
}

/// Solves the network with every listed fault applied and the given source
/// EMFs, applying DER current limiting where configured.
pub fn solve_with_dispatch(network: &PhasorNetwork, dispatch: &Dispatch) -> Result<BusSolution, GridError> {
    network.validate()?;
    if dispatch.der_emf.len() != network.ders.len() {
        return Err(GridError::Invalid("dispatch does not match DER count".into()));
    }
    let mut modes: Vec<SourceMode> = dispatch.der_emf.iter().map(|&e| SourceMode::Emf(e)).collect();
    let mut lin = solve_linear(network, &modes, dispatch.grid_emf)?;

    if network.ders.iter().any(|d| d.i_max.is_some()) {
        let mut converged = false;
        for _ in 0..MAX_LIMIT_ITERS {
            let mut next = modes.clone();
            let mut delta: f64 = 0.0;
            for (k, der) in network.ders.iter().enumerate() {
                let Some(i_max) = der.i_max else { continue };
                let e = dispatch.der_emf[k];
                let i_ref = (e - lin.voltages[der.bus]) / der.source_impedance;
                next[k] = if i_ref.norm() > i_max {
                    SourceMode::Current(limit_current(i_ref, i_max))
                } else {
                    SourceMode::Emf(e)
                };
                delta = delta.max(match (modes[k], next[k]) {
                    (SourceMode::Current(a), SourceMode::Current(b)) => (a - b).norm() / i_max,
                    (SourceMode::Emf(_), SourceMode::Emf(_)) => 0.0,
                    _ => f64::INFINITY,
                });
            }
            if delta <= 1e-12 {
                converged = true;
                break;
            }
            modes = next;
            lin = solve_linear(network, &modes, dispatch.grid_emf)?;
        }
        if !converged {
            return Err(GridError::SolveFailure("current-limit iteration did not settle".into()));
        }
    }

    Ok(assemble(network, &modes, dispatch.grid_emf, lin))
}

fn assemble(network: &PhasorNetwork, modes: &[SourceMode], grid_emf: Option<Phasor>, lin: Linear) -> BusSolution {
    let n_buses = network.n_buses();
    let v = &lin.voltages;
    let mut line_currents = vec![LineFlow::default(); network.lines.len()];
    for br in &lin.branches {
        let i = (v[br.a] - v[br.b]) / br.impedance;
        let line = &network.lines[br.line];
        if br.a == line.from_bus {
            line_currents[br.line].from_end = i;
        }
        if br.b == line.to_bus {
            line_currents[br.line].to_end = -i;
        }
    }
    let der_currents: Vec<Phasor> = network
        .ders
        .iter()
        .zip(modes)
        .map(|(d, &m)| der_current(d, m, v[d.bus]))
        .collect();
    let der_injections = network
        .ders
        .iter()
        .zip(&der_currents)
        .map(|(d, &i)| three_phase_power(v[d.bus], i))
        .collect();
    let der_limited = modes.iter().map(|m| matches!(m, SourceMode::Current(_))).collect();
    let grid_current = match (&network.grid, grid_emf) {
        (Some(g), Some(e)) => Some((e - v[g.bus]) / g.impedance),
        _ => None,
    };
    let grid_injection = match (&network.grid, grid_current) {
        (Some(g), Some(i)) => Some(three_phase_power(v[g.bus], i)),
        _ => None,
    };
    BusSolution {
        bus_voltages: v[..n_buses].to_vec(),
        fault_voltages: v[n_buses..].to_vec(),
        line_currents,
        der_buses: network.ders.iter().map(|d| d.bus).collect(),
        der_currents,
        der_injections,
        der_limited,
        grid_current,
        grid_injection,
    }
}

/// Dispatch on the fault-free network, then solve with every listed fault applied.
pub fn solve_steady(network: &PhasorNetwork) -> Result<BusSolution, GridError> {
    let d = dispatch(network)?;
    solve_with_dispatch(network, &d)
}

/// Three-phase active power consumed by loads, series branches, and fault shunts.
#[cfg(test)]
pub(crate) fn consumed_power(network: &PhasorNetwork, sol: &BusSolution) -> f64 {
    let mut v_nodes = sol.bus_voltages.clone();
    v_nodes.extend_from_slice(&sol.fault_voltages);
    let mut total = 0.0;
    for load in &network.loads {
        let v = v_nodes[load.bus];
        total += three_phase_power(v, v * load.admittance(network.buses[load.bus].nominal_voltage));
    }
    for br in branches(network) {
        let i = (v_nodes[br.a] - v_nodes[br.b]) / br.impedance;
        total += 3.0 * i.norm_sqr() * br.impedance.re;
    }
    for (k, f) in network.faults.iter().enumerate() {
        let v = v_nodes[network.n_buses() + k];
        total += 3.0 * v.norm_sqr() * f.fault_type.severity() / f.resistance;
    }
    total
}
