//! Built-in microgrid topologies.

use super::{Bus, BusKind, DerMeta, DerUnit, Line, Load, PhasorNetwork, DEFAULT_LINE_VOLTAGE};

/// Steady load placed at every bus that hosts a load in the presets.
pub const PRESET_LOAD_P: f64 = 6_000.0;
pub const PRESET_LOAD_Q: f64 = 1_000.0;

pub const NAMES: [&str; 6] = ["radial2", "ring3", "mesh4", "ring4", "hetero-ring3", "hetero-ring4"];

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub network: PhasorNetwork,
}

struct Spec {
    n_der: usize,
    extra_load_buses: usize,
    lines: &'static [(usize, usize, f64, f64)],
    droop: &'static [f64],
    meta: &'static [(f64, f64, f64)],
}

const UNIFORM_META: (f64, f64, f64) = (1000.0, 4e-3, 200e-6);

fn build(name: &'static str, spec: Spec) -> Preset {
    let n_bus = spec.n_der + spec.extra_load_buses;
    let buses = (0..n_bus)
        .map(|id| Bus {
            id,
            kind: if id < spec.n_der { BusKind::Der } else { BusKind::Load },
            nominal_voltage: DEFAULT_LINE_VOLTAGE,
        })
        .collect();
    let lines = spec
        .lines
        .iter()
        .enumerate()
        .map(|(id, &(a, b, r, x))| Line::new(id, a, b, r, x))
        .collect();
    let ders = (0..spec.n_der)
        .map(|i| {
            let mut d = DerUnit::new(i, spec.droop[i.min(spec.droop.len() - 1)]);
            let (v_dc, l_f, c_f) = spec.meta[i.min(spec.meta.len() - 1)];
            d.meta = DerMeta { v_dc, l_f, c_f };
            d
        })
        .collect();
    let loads = (0..n_bus)
        .map(|bus| Load {
            bus,
            p: PRESET_LOAD_P,
            q: PRESET_LOAD_Q,
        })
        .collect();
    Preset {
        name,
        network: PhasorNetwork {
            buses,
            lines,
            ders,
            loads,
            grid: None,
            faults: Vec::new(),
        },
    }
}

/// Looks up a built-in topology by name. Buses are numbered from 0, so the
/// line "DER1–DER2" joins buses 0 and 1.
pub fn preset(name: &str) -> Option<Preset> {
    let p = match name {
        "radial2" => build(
            "radial2",
            Spec {
                n_der: 2,
                extra_load_buses: 0,
                lines: &[(0, 1, 0.7, 1.884)],
                droop: &[1e-4],
                meta: &[UNIFORM_META],
            },
        ),
        "ring3" => build(
            "ring3",
            Spec {
                n_der: 3,
                extra_load_buses: 0,
                lines: &[(0, 1, 0.7, 1.884), (0, 2, 0.4, 6.154), (1, 2, 1.4, 3.14)],
                droop: &[1e-4],
                meta: &[UNIFORM_META],
            },
        ),
        "mesh4" => build(
            "mesh4",
            Spec {
                n_der: 3,
                extra_load_buses: 1,
                lines: &[
                    (0, 1, 0.3, 1.884),
                    (0, 2, 0.2, 6.154),
                    (1, 2, 0.7, 3.14),
                    (0, 3, 0.1, 6.154),
                ],
                droop: &[1e-4],
                meta: &[UNIFORM_META],
            },
        ),
        "ring4" => build(
            "ring4",
            Spec {
                n_der: 4,
                extra_load_buses: 0,
                lines: RING4_LINES,
                droop: &[1e-4],
                meta: &[UNIFORM_META],
            },
        ),
        "hetero-ring3" => build(
            "hetero-ring3",
            Spec {
                n_der: 3,
                extra_load_buses: 0,
                lines: &[(0, 1, 0.5, 1.553), (0, 2, 0.35, 5.435), (1, 2, 1.8, 4.23)],
                droop: &[1.0e-4, 0.9e-4, 1.25e-4],
                meta: &[(800.0, 4.0e-3, 200e-6), (1000.0, 4.3e-3, 220e-6), (1000.0, 3.8e-3, 180e-6)],
            },
        ),
        "hetero-ring4" => build(
            "hetero-ring4",
            Spec {
                n_der: 4,
                extra_load_buses: 0,
                lines: RING4_LINES,
                droop: &[1.0e-4, 0.9e-4, 1.25e-4, 1.5e-4],
                meta: &[
                    (1000.0, 4.0e-3, 200e-6),
                    (1000.0, 4.2e-3, 220e-6),
                    (800.0, 3.8e-3, 180e-6),
                    (1000.0, 4.4e-3, 210e-6),
                ],
            },
        ),
        _ => return None,
    };
    Some(p)
}

const RING4_LINES: &[(usize, usize, f64, f64)] = &[
    (0, 1, 0.75, 1.456),
    (1, 2, 1.34, 3.12),
    (2, 3, 0.86, 2.46),
    (3, 0, 0.57, 1.63),
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_admittance, Phasor};

    #[test]
    fn every_preset_builds_and_is_covered() {
        for name in NAMES {
            let p = preset(name).unwrap();
            assert_eq!(p.name, name);
            build_admittance(&p.network).unwrap();
        }
        assert!(preset("ring5").is_none());
    }

    #[test]
    fn tabulated_impedances_are_exact() {
        let z = |name: &str, line: usize| preset(name).unwrap().network.lines[line].impedance;
        assert_eq!(z("ring3", 0), Phasor::new(0.7, 1.884));
        assert_eq!(z("ring3", 1), Phasor::new(0.4, 6.154));
        assert_eq!(z("ring3", 2), Phasor::new(1.4, 3.14));
        assert_eq!(z("mesh4", 0), Phasor::new(0.3, 1.884));
        assert_eq!(z("mesh4", 3), Phasor::new(0.1, 6.154));
        assert_eq!(z("hetero-ring3", 2), Phasor::new(1.8, 4.23));
        assert_eq!(z("ring4", 3), Phasor::new(0.57, 1.63));
        assert_eq!(z("hetero-ring4", 1), Phasor::new(1.34, 3.12));
    }

    #[test]
    fn heterogeneous_parameters() {
        let n = preset("hetero-ring3").unwrap().network;
        let droop: Vec<f64> = n.ders.iter().map(|d| d.droop_coeff).collect();
        assert_eq!(droop, vec![1.0e-4, 0.9e-4, 1.25e-4]);
        assert_eq!(n.ders[0].meta.v_dc, 800.0);
        assert_eq!(n.ders[1].meta.l_f, 4.3e-3);
        let n4 = preset("hetero-ring4").unwrap().network;
        assert_eq!(n4.ders[3].droop_coeff, 1.5e-4);
        assert_eq!(n4.ders[2].meta.v_dc, 800.0);
        assert_eq!(n4.ders[3].meta.c_f, 210e-6);
        for d in &n4.ders {
            assert_eq!(d.rated_power, 10_000.0);
        }
    }

    #[test]
    fn mesh4_has_three_ders_and_a_load_bus() {
        let n = preset("mesh4").unwrap().network;
        assert_eq!(n.n_buses(), 4);
        assert_eq!(n.ders.len(), 3);
        assert_eq!(n.buses[3].kind, BusKind::Load);
    }
}
