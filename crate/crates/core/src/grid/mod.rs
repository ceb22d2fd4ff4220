//! Quasi-static phasor model of an islanded (or grid-tied) AC microgrid.
//!
//! Every quantity is a per-phase, line-to-neutral phasor of an aggregate
//! single-phase equivalent circuit. Three-phase powers are reported as
//! `3 · Re(V · conj(I))`.

mod admittance;
mod distance;
mod measure;
pub mod presets;
mod solve;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::GridError;

pub use admittance::{build_admittance, AdmittanceMatrix};
pub use distance::{electrical_distance, fault_point_distances};
pub use measure::{capture_baseline, measure, measure_line};
pub use solve::{
    dispatch, limit_current, share_power, solve_network, solve_steady, solve_with_dispatch, BusSolution, Dispatch, LineFlow,
};

pub type Phasor = Complex64;

pub const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Default line-to-line voltage of the low-voltage microgrids studied.
pub const DEFAULT_LINE_VOLTAGE: f64 = 415.0;
pub const DEFAULT_RATED_POWER: f64 = 10_000.0;
pub const DEFAULT_FREQUENCY: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Der,
    Load,
    Junction,
    Pcc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Line-to-line RMS volts.
    pub nominal_voltage: f64,
}

impl Bus {
    pub fn nominal_phase_voltage(&self) -> f64 {
        self.nominal_voltage / SQRT_3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BreakerState {
    #[default]
    Closed,
    Open,
}

impl BreakerState {
    pub fn is_closed(self) -> bool {
        self == BreakerState::Closed
    }
}

/// Which end of a line a breaker sits at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineEnd {
    From,
    To,
}

/// A breaker is identified by its line and end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BreakerId {
    pub line: usize,
    pub end: LineEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    pub impedance: Phasor,
    pub breaker_from: BreakerState,
    pub breaker_to: BreakerState,
}

impl Line {
    pub fn new(id: usize, from_bus: usize, to_bus: usize, r: f64, x: f64) -> Self {
        Self {
            id,
            from_bus,
            to_bus,
            impedance: Phasor::new(r, x),
            breaker_from: BreakerState::Closed,
            breaker_to: BreakerState::Closed,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.breaker_from.is_closed() && self.breaker_to.is_closed()
    }

    pub fn breaker(&self, end: LineEnd) -> BreakerState {
        match end {
            LineEnd::From => self.breaker_from,
            LineEnd::To => self.breaker_to,
        }
    }

    pub fn breaker_mut(&mut self, end: LineEnd) -> &mut BreakerState {
        match end {
            LineEnd::From => &mut self.breaker_from,
            LineEnd::To => &mut self.breaker_to,
        }
    }

    pub fn bus_at(&self, end: LineEnd) -> usize {
        match end {
            LineEnd::From => self.from_bus,
            LineEnd::To => self.to_bus,
        }
    }

    /// The end of this line attached to `bus`, if any.
    pub fn end_at(&self, bus: usize) -> Option<LineEnd> {
        if self.from_bus == bus {
            Some(LineEnd::From)
        } else if self.to_bus == bus {
            Some(LineEnd::To)
        } else {
            None
        }
    }

    /// Conventional breaker label, e.g. `CB12` for the breaker of line 1–2 at bus 1
    /// (buses numbered from 1).
    pub fn breaker_label(&self, end: LineEnd) -> String {
        let (near, far) = match end {
            LineEnd::From => (self.from_bus + 1, self.to_bus + 1),
            LineEnd::To => (self.to_bus + 1, self.from_bus + 1),
        };
        if near < 10 && far < 10 {
            format!("CB{near}{far}")
        } else {
            format!("CB{near}_{far}")
        }
    }
}

/// Converter parameters that the phasor model carries but does not simulate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerMeta {
    pub v_dc: f64,
    pub l_f: f64,
    pub c_f: f64,
}

impl Default for DerMeta {
    fn default() -> Self {
        Self {
            v_dc: 1000.0,
            l_f: 4e-3,
            c_f: 200e-6,
        }
    }
}

/// Grid-forming inverter: an EMF behind a source impedance whose angle is set
/// by droop power sharing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerUnit {
    pub bus: usize,
    pub rated_power: f64,
    /// Active-power droop coefficient m_p (pu/Hz).
    pub droop_coeff: f64,
    /// Output-current ceiling in amperes; `None` disables limiting.
    pub i_max: Option<f64>,
    pub source_impedance: Phasor,
    pub meta: DerMeta,
}

pub const DEFAULT_SOURCE_IMPEDANCE: Phasor = Phasor::new(0.1, 0.8);

impl DerUnit {
    pub fn new(bus: usize, droop_coeff: f64) -> Self {
        Self {
            bus,
            rated_power: DEFAULT_RATED_POWER,
            droop_coeff,
            i_max: None,
            source_impedance: DEFAULT_SOURCE_IMPEDANCE,
            meta: DerMeta::default(),
        }
    }

    /// Rated per-phase current at the given line-to-line voltage.
    pub fn rated_current(&self, line_voltage: f64) -> f64 {
        self.rated_power / (SQRT_3 * line_voltage)
    }
}

/// Constant-impedance load, specified by its three-phase P and Q at nominal voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
}

impl Load {
    /// Per-phase shunt admittance at the given line-to-line nominal voltage.
    pub fn admittance(&self, nominal_line_voltage: f64) -> Phasor {
        Phasor::new(self.p, -self.q) / (nominal_line_voltage * nominal_line_voltage)
    }
}

/// Stiff upstream grid behind an impedance at a point of common coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTie {
    pub bus: usize,
    pub impedance: Phasor,
    /// EMF magnitude relative to nominal; a sag of depth d sets this to 1 − d.
    pub voltage_scale: f64,
}

#[allow(clippy::upper_case_acronyms)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaultType {
    AG,
    BG,
    CG,
    AB,
    ABG,
    ABC,
    ABCG,
    LL,
    LLLG,
}

impl FaultType {
    pub const ALL: [FaultType; 9] = [
        FaultType::AG,
        FaultType::BG,
        FaultType::CG,
        FaultType::AB,
        FaultType::ABG,
        FaultType::ABC,
        FaultType::ABCG,
        FaultType::LL,
        FaultType::LLLG,
    ];

    /// Fraction of the fault conductance seen by the aggregate single-phase
    /// equivalent: one faulted phase of three, two of three, or all three.
    pub fn severity(self) -> f64 {
        match self {
            FaultType::AG | FaultType::BG | FaultType::CG => 1.0 / 3.0,
            FaultType::AB | FaultType::LL | FaultType::ABG => 2.0 / 3.0,
            FaultType::ABC | FaultType::ABCG | FaultType::LLLG => 1.0,
        }
    }

    /// Rank used on the severity axis of type sweeps (AG < ABG < ABCG).
    pub fn ordinal(self) -> u8 {
        match self {
            FaultType::AG | FaultType::BG | FaultType::CG => 1,
            FaultType::AB | FaultType::LL => 2,
            FaultType::ABG => 3,
            FaultType::ABC => 4,
            FaultType::ABCG | FaultType::LLLG => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FaultType::AG => "AG",
            FaultType::BG => "BG",
            FaultType::CG => "CG",
            FaultType::AB => "AB",
            FaultType::ABG => "ABG",
            FaultType::ABC => "ABC",
            FaultType::ABCG => "ABCG",
            FaultType::LL => "LL",
            FaultType::LLLG => "LLLG",
        }
    }
}

impl std::fmt::Display for FaultType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub line: usize,
    /// Fraction of the line length measured from `from_bus`.
    pub position: f64,
    pub fault_type: FaultType,
    pub resistance: f64,
    pub t_start: f64,
    pub t_end: f64,
}

impl FaultSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.position) {
            return Err(format!("position {} outside [0, 1]", self.position));
        }
        if !(self.resistance > 0.0) {
            return Err(format!("resistance {} must be positive", self.resistance));
        }
        if !(self.t_start < self.t_end) {
            return Err(format!("t_start {} must precede t_end {}", self.t_start, self.t_end));
        }
        Ok(())
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.t_start && t < self.t_end
    }
}

/// Aggregate local RMS measurement at one DER (or one DER-side line end).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurement {
    pub t: f64,
    /// Line-to-neutral RMS volts.
    pub v_rms: f64,
    pub i_rms: f64,
    /// Three-phase active power in watts.
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Baseline {
    pub v0: f64,
    pub i0: f64,
    pub p0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasorNetwork {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub ders: Vec<DerUnit>,
    pub loads: Vec<Load>,
    pub grid: Option<GridTie>,
    /// Faults currently applied; at most one per line.
    pub faults: Vec<FaultSpec>,
}

impl PhasorNetwork {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Structural checks; the source-coverage check lives in [`build_admittance`].
    pub fn validate(&self) -> Result<(), GridError> {
        if self.buses.is_empty() {
            return Err(GridError::Invalid("network has no buses".into()));
        }
        for (i, bus) in self.buses.iter().enumerate() {
            if bus.id != i {
                return Err(GridError::Invalid(format!("bus ids must be dense from 0; found {} at {i}", bus.id)));
            }
            if !(bus.nominal_voltage > 0.0) {
                return Err(GridError::Invalid(format!("bus {i} nominal voltage must be positive")));
            }
        }
        let n = self.buses.len();
        for (i, line) in self.lines.iter().enumerate() {
            if line.id != i {
                return Err(GridError::Invalid(format!("line ids must be dense from 0; found {} at {i}", line.id)));
            }
            if line.from_bus >= n || line.to_bus >= n {
                return Err(GridError::Invalid(format!("line {i} references a missing bus")));
            }
            if line.from_bus == line.to_bus {
                return Err(GridError::Invalid(format!("line {i} starts and ends at bus {}", line.from_bus)));
            }
            if line.impedance.re < 0.0 || !line.impedance.norm().is_finite() || line.impedance.norm() == 0.0 {
                return Err(GridError::Invalid(format!("line {i} impedance must be finite, nonzero, R >= 0")));
            }
        }
        for (i, der) in self.ders.iter().enumerate() {
            if der.bus >= n {
                return Err(GridError::Invalid(format!("DER {i} references missing bus {}", der.bus)));
            }
            if !(der.droop_coeff > 0.0) || !(der.rated_power > 0.0) {
                return Err(GridError::Invalid(format!("DER {i} needs positive droop and rating")));
            }
            if matches!(der.i_max, Some(v) if !(v > 0.0)) {
                return Err(GridError::Invalid(format!("DER {i} i_max must be positive")));
            }
            if der.source_impedance.norm() == 0.0 {
                return Err(GridError::Invalid(format!("DER {i} source impedance must be nonzero")));
            }
        }
        if let Some(grid) = &self.grid {
            if grid.bus >= n || grid.impedance.norm() == 0.0 {
                return Err(GridError::Invalid("grid tie needs a valid bus and nonzero impedance".into()));
            }
        }
        for load in &self.loads {
            if load.bus >= n {
                return Err(GridError::Invalid(format!("load references missing bus {}", load.bus)));
            }
        }
        let mut seen = vec![false; self.lines.len()];
        for fault in &self.faults {
            if fault.line >= self.lines.len() {
                return Err(GridError::Invalid(format!("fault on missing line {}", fault.line)));
            }
            if std::mem::replace(&mut seen[fault.line], true) {
                return Err(GridError::Invalid(format!("more than one fault on line {}", fault.line)));
            }
            fault.validate().map_err(GridError::Invalid)?;
        }
        Ok(())
    }

    /// Lines incident to `bus`, in line-id order.
    pub fn lines_at(&self, bus: usize) -> Vec<usize> {
        self.lines
            .iter()
            .filter(|l| l.from_bus == bus || l.to_bus == bus)
            .map(|l| l.id)
            .collect()
    }

    pub fn der_at(&self, bus: usize) -> Option<usize> {
        self.ders.iter().position(|d| d.bus == bus)
    }

    pub fn without_faults(&self) -> PhasorNetwork {
        PhasorNetwork {
            faults: Vec::new(),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn severity_ordering() {
        assert!(FaultType::AG.severity() < FaultType::ABG.severity());
        assert!(FaultType::ABG.severity() < FaultType::ABCG.severity());
        assert_eq!(FaultType::LLLG.severity(), 1.0);
        assert_eq!(FaultType::LL.severity(), FaultType::AB.severity());
    }

    #[test]
    fn breaker_labels_follow_bus_numbering() {
        let line = Line::new(0, 0, 1, 0.7, 1.884);
        assert_eq!(line.breaker_label(LineEnd::From), "CB12");
        assert_eq!(line.breaker_label(LineEnd::To), "CB21");
    }

    #[test]
    fn fault_spec_validation() {
        let mut f = FaultSpec {
            line: 0,
            position: 0.5,
            fault_type: FaultType::AG,
            resistance: 0.1,
            t_start: 1.0,
            t_end: 1.5,
        };
        assert!(f.validate().is_ok());
        f.position = 1.2;
        assert!(f.validate().is_err());
        f.position = 0.5;
        f.resistance = 0.0;
        assert!(f.validate().is_err());
        f.resistance = 0.1;
        f.t_end = 0.5;
        assert!(f.validate().is_err());
    }

    #[test]
    fn rejects_self_loop() {
        let net = PhasorNetwork {
            buses: vec![Bus { id: 0, kind: BusKind::Der, nominal_voltage: 415.0 }],
            lines: vec![Line::new(0, 0, 0, 1.0, 0.0)],
            ders: vec![DerUnit::new(0, 1e-4)],
            loads: vec![],
            grid: None,
            faults: vec![],
        };
        assert!(matches!(net.validate(), Err(GridError::Invalid(_))));
    }
}
