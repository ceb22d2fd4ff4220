use std::fmt;

use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::ConfigError;
use crate::grid::{
    self, build_admittance, presets, Bus, BusKind, DerMeta, DerUnit, FaultSpec, GridTie, Line, Load, Phasor,
    PhasorNetwork, DEFAULT_LINE_VOLTAGE, DEFAULT_RATED_POWER,
};
use crate::metrics::DEFAULT_ACCURACY_WINDOW_MS;
use crate::relay::{LatchMode, MembraneDrive, NeuronParams, DEFAULT_DT};

pub const DEFAULT_DT_NETWORK: f64 = 5e-5;

/// A built-in topology name or an explicit network.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum TopologySpec {
    Preset(String),
    Explicit(ExplicitTopology),
}

impl<'de> Deserialize<'de> for TopologySpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct TopologyVisitor;

        impl<'de> Visitor<'de> for TopologyVisitor {
            type Value = TopologySpec;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a preset name or a table with buses and lines")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<TopologySpec, E> {
                Ok(TopologySpec::Preset(v.to_string()))
            }

            fn visit_map<A: MapAccess<'de>>(self, map: A) -> Result<TopologySpec, A::Error> {
                ExplicitTopology::deserialize(de::value::MapAccessDeserializer::new(map)).map(TopologySpec::Explicit)
            }
        }

        deserializer.deserialize_any(TopologyVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusSpec {
    pub kind: BusKind,
    #[serde(default = "default_line_voltage")]
    pub nominal_voltage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerSpec {
    pub bus: usize,
    pub droop_coeff: f64,
    #[serde(default = "default_rated_power")]
    pub rated_power: f64,
}

/// Buses are numbered by their position in `buses`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitTopology {
    pub buses: Vec<BusSpec>,
    pub lines: Vec<LineSpec>,
    pub ders: Vec<DerSpec>,
    #[serde(default)]
    pub loads: Vec<Load>,
}

/// Partial neuron parameters layered over the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuronOverride {
    /// Start from membrane set 1, 2 or 3 (capacitance, resistance, decay factor).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub membrane_set: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_gain: Option<f64>,
}

impl NeuronOverride {
    pub fn apply(&self, base: NeuronParams) -> Result<NeuronParams, String> {
        let mut p = base;
        if let Some(n) = self.membrane_set {
            let t = NeuronParams::membrane_set(n).ok_or_else(|| format!("no membrane set {n}; expected 1, 2 or 3"))?;
            p.c_m = t.c_m;
            p.r_m = t.r_m;
            p.eta = t.eta;
        }
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut p.alpha, self.alpha);
        set(&mut p.beta, self.beta);
        set(&mut p.gamma, self.gamma);
        set(&mut p.k, self.k);
        set(&mut p.c_m, self.c_m);
        set(&mut p.r_m, self.r_m);
        set(&mut p.v0, self.v0);
        set(&mut p.eta, self.eta);
        set(&mut p.lambda, self.lambda);
        set(&mut p.d_min, self.d_min);
        set(&mut p.input_gain, self.input_gain);
        Ok(p)
    }
}

/// Per-DER settings, addressed by DER index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerOverride {
    pub der: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub droop_coeff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rated_power: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_max: Option<f64>,
    /// `[R, X]` in ohms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_impedance: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<DerMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neuron: Option<NeuronOverride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub bus: usize,
    /// `[R, X]` in ohms.
    pub impedance: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventSpec {
    /// Scales the load at `bus` by `1 + fraction`.
    LoadStep {
        bus: usize,
        fraction: f64,
        t_start: f64,
        t_end: f64,
    },
    Fault {
        line: usize,
        position: f64,
        fault_type: grid::FaultType,
        resistance: f64,
        t_start: f64,
        t_end: f64,
    },
    /// Lowers the grid-tie EMF to `1 − depth` of nominal.
    GridSag { depth: f64, t_start: f64, t_end: f64 },
}

impl EventSpec {
    pub fn window(&self) -> (f64, f64) {
        match *self {
            EventSpec::LoadStep { t_start, t_end, .. }
            | EventSpec::Fault { t_start, t_end, .. }
            | EventSpec::GridSag { t_start, t_end, .. } => (t_start, t_end),
        }
    }

    pub fn is_active(&self, t: f64) -> bool {
        let (a, b) = self.window();
        t >= a && t < b
    }

    pub fn fault_spec(&self) -> Option<FaultSpec> {
        match *self {
            EventSpec::Fault {
                line,
                position,
                fault_type,
                resistance,
                t_start,
                t_end,
            } => Some(FaultSpec {
                line,
                position,
                fault_type,
                resistance,
                t_start,
                t_end,
            }),
            _ => None,
        }
    }

    pub fn from_fault(f: &FaultSpec) -> Self {
        EventSpec::Fault {
            line: f.line,
            position: f.position,
            fault_type: f.fault_type,
            resistance: f.resistance,
            t_start: f.t_start,
            t_end: f.t_end,
        }
    }
}

/// Which measurement channel drives the membrane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveChannel {
    /// The DER terminal measurement.
    #[default]
    Terminal,
    /// The sum of the per-line spike trains of the DER.
    LineSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSettings {
    pub duration_s: f64,
    pub dt_neuron: f64,
    pub dt_network: f64,
    pub seed: u64,
    pub breakers_enabled: bool,
    pub latch_mode: LatchMode,
    pub membrane_drive: MembraneDrive,
    pub drive_channel: DriveChannel,
    /// Length of the relay's sliding RMS window; 0 uses instantaneous values.
    pub rms_window_s: f64,
    /// The initial baseline is the mean over `[baseline_at_s − baseline_window_s, baseline_at_s]`.
    pub baseline_at_s: f64,
    pub baseline_window_s: f64,
    pub settle_window_s: f64,
    pub breaker_delay_s: f64,
    /// Membrane and electrical traces keep one sample per this many neuron steps.
    pub trace_decimation: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            duration_s: 0.5,
            dt_neuron: DEFAULT_DT,
            dt_network: DEFAULT_DT_NETWORK,
            seed: 0,
            breakers_enabled: true,
            latch_mode: LatchMode::On,
            membrane_drive: MembraneDrive::Gated,
            drive_channel: DriveChannel::Terminal,
            rms_window_s: 0.02,
            baseline_at_s: 0.05,
            baseline_window_s: 0.02,
            settle_window_s: 0.1,
            breaker_delay_s: 0.0,
            trace_decimation: 100,
        }
    }
}

impl SimSettings {
    /// Neuron steps per network step.
    pub fn substeps(&self) -> usize {
        (self.dt_network / self.dt_neuron).round() as usize
    }

    pub fn steps_for(&self, seconds: f64) -> usize {
        (seconds / self.dt_neuron).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSettings {
    pub accuracy_window_ms: f64,
}

impl Default for MetricsSettings {
    fn default() -> Self {
        Self {
            accuracy_window_ms: DEFAULT_ACCURACY_WINDOW_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub topology: TopologySpec,
    #[serde(default)]
    pub neuron: NeuronOverride,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ders: Vec<DerOverride>,
    /// Replaces the topology's own loads when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loads: Option<Vec<Load>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub sim: SimSettings,
    #[serde(default)]
    pub metrics: MetricsSettings,
}

fn default_name() -> String {
    "scenario".to_string()
}

fn default_line_voltage() -> f64 {
    DEFAULT_LINE_VOLTAGE
}

fn default_rated_power() -> f64 {
    DEFAULT_RATED_POWER
}

fn phasor(z: [f64; 2]) -> Phasor {
    Phasor::new(z[0], z[1])
}

impl ScenarioConfig {
    /// A scenario on a built-in topology with default settings and no events.
    pub fn preset(topology: &str) -> Self {
        Self {
            name: topology.to_string(),
            topology: TopologySpec::Preset(topology.to_string()),
            neuron: NeuronOverride::default(),
            ders: Vec::new(),
            loads: None,
            grid: None,
            events: Vec::new(),
            sim: SimSettings::default(),
            metrics: MetricsSettings::default(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config always serializes")
    }

    /// The as-built network: all breakers closed, no faults applied.
    pub fn build_network(&self) -> Result<PhasorNetwork, ConfigError> {
        let mut net = match &self.topology {
            TopologySpec::Preset(name) => presets::preset(name)
                .ok_or_else(|| {
                    ConfigError::new(
                        "topology",
                        format!("unknown preset `{name}`; expected one of {}", presets::NAMES.join(", ")),
                    )
                })?
                .network,
            TopologySpec::Explicit(t) => PhasorNetwork {
                buses: t
                    .buses
                    .iter()
                    .enumerate()
                    .map(|(id, b)| Bus {
                        id,
                        kind: b.kind,
                        nominal_voltage: b.nominal_voltage,
                    })
                    .collect(),
                lines: t
                    .lines
                    .iter()
                    .enumerate()
                    .map(|(id, l)| Line::new(id, l.from_bus, l.to_bus, l.r, l.x))
                    .collect(),
                ders: t
                    .ders
                    .iter()
                    .map(|d| DerUnit {
                        rated_power: d.rated_power,
                        ..DerUnit::new(d.bus, d.droop_coeff)
                    })
                    .collect(),
                loads: t.loads.clone(),
                grid: None,
                faults: Vec::new(),
            },
        };
        if let Some(loads) = &self.loads {
            net.loads = loads.clone();
        }
        for (i, o) in self.ders.iter().enumerate() {
            let path = format!("ders[{i}]");
            let der = net
                .ders
                .get_mut(o.der)
                .ok_or_else(|| ConfigError::new(format!("{path}.der"), format!("no DER {}", o.der)))?;
            if let Some(v) = o.droop_coeff {
                der.droop_coeff = v;
            }
            if let Some(v) = o.rated_power {
                der.rated_power = v;
            }
            if o.i_max.is_some() {
                der.i_max = o.i_max;
            }
            if let Some(z) = o.source_impedance {
                der.source_impedance = phasor(z);
            }
            if let Some(m) = o.meta {
                der.meta = m;
            }
        }
        if let Some(g) = &self.grid {
            net.grid = Some(GridTie {
                bus: g.bus,
                impedance: phasor(g.impedance),
                voltage_scale: 1.0,
            });
        }
        net.validate().map_err(|e| ConfigError::new("topology", e.to_string()))?;
        build_admittance(&net).map_err(|e| ConfigError::new("topology", e.to_string()))?;
        Ok(net)
    }

    /// Effective neuron parameters of every DER, in DER order.
    pub fn neuron_params(&self, n_ders: usize) -> Result<Vec<NeuronParams>, ConfigError> {
        let base = self
            .neuron
            .apply(NeuronParams {
                dt: self.sim.dt_neuron,
                ..NeuronParams::default()
            })
            .map_err(|m| ConfigError::new("neuron.membrane_set", m))?;
        let mut out = vec![base; n_ders];
        for (i, o) in self.ders.iter().enumerate() {
            if let (Some(n), Some(p)) = (o.neuron, out.get_mut(o.der)) {
                *p = n.apply(*p).map_err(|m| ConfigError::new(format!("ders[{i}].neuron.membrane_set"), m))?;
            }
        }
        for (i, p) in out.iter().enumerate() {
            p.validate().map_err(|e| {
                let path = match self.ders.iter().position(|o| o.der == i && o.neuron.is_some()) {
                    Some(k) => format!("ders[{k}].neuron"),
                    None => "neuron".to_string(),
                };
                ConfigError::new(path, e.to_string())
            })?;
        }
        Ok(out)
    }

    pub fn faults(&self) -> Vec<FaultSpec> {
        self.events.iter().filter_map(EventSpec::fault_spec).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.sim;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::new(format!("sim.{name}"), format!("must be positive, got {v}")))
            }
        };
        positive("duration_s", s.duration_s)?;
        positive("dt_neuron", s.dt_neuron)?;
        positive("dt_network", s.dt_network)?;
        positive("baseline_window_s", s.baseline_window_s)?;
        let ratio = s.dt_network / s.dt_neuron;
        if ratio < 0.5 || (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(ConfigError::new(
                "sim.dt_network",
                format!("dt_neuron {} must divide dt_network {}", s.dt_neuron, s.dt_network),
            ));
        }
        for (name, v) in [
            ("rms_window_s", s.rms_window_s),
            ("settle_window_s", s.settle_window_s),
            ("breaker_delay_s", s.breaker_delay_s),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::new(format!("sim.{name}"), format!("must be non-negative, got {v}")));
            }
        }
        if s.trace_decimation == 0 {
            return Err(ConfigError::new("sim.trace_decimation", "must be at least 1"));
        }
        if !(s.baseline_at_s >= s.baseline_window_s && s.baseline_at_s < s.duration_s) {
            return Err(ConfigError::new(
                "sim.baseline_at_s",
                "baseline window must fit between 0 and the end of the run",
            ));
        }
        if !(self.metrics.accuracy_window_ms > 0.0) {
            return Err(ConfigError::new("metrics.accuracy_window_ms", "must be positive"));
        }

        let net = self.build_network()?;
        self.neuron_params(net.ders.len())?;

        let mut last_end: f64 = 0.0;
        for (i, ev) in self.events.iter().enumerate() {
            let path = format!("events[{i}]");
            let (t0, t1) = ev.window();
            if !(t0 < t1) {
                return Err(ConfigError::new(path, format!("t_start {t0} must precede t_end {t1}")));
            }
            if t0 <= s.baseline_at_s {
                return Err(ConfigError::new(
                    format!("{path}.t_start"),
                    format!("event at {t0} s falls inside the baseline window ending at {} s", s.baseline_at_s),
                ));
            }
            last_end = last_end.max(t1.min(f64::MAX));
            match ev {
                EventSpec::Fault { line, .. } => {
                    let f = ev.fault_spec().expect("fault event");
                    f.validate().map_err(|m| ConfigError::new(&path, m))?;
                    if *line >= net.lines.len() {
                        return Err(ConfigError::new(format!("{path}.line"), format!("no line {line}")));
                    }
                }
                EventSpec::LoadStep { bus, fraction, .. } => {
                    if !net.loads.iter().any(|l| l.bus == *bus) {
                        return Err(ConfigError::new(format!("{path}.bus"), format!("no load at bus {bus}")));
                    }
                    if !(*fraction > -1.0 && fraction.is_finite()) {
                        return Err(ConfigError::new(format!("{path}.fraction"), "must exceed -1"));
                    }
                }
                EventSpec::GridSag { depth, .. } => {
                    if net.grid.is_none() {
                        return Err(ConfigError::new(&path, "grid sag needs a grid tie"));
                    }
                    if !(0.0..1.0).contains(depth) {
                        return Err(ConfigError::new(format!("{path}.depth"), "must lie in [0, 1)"));
                    }
                }
            }
            for (j, other) in self.events.iter().enumerate().take(i) {
                let same_target = match (ev, other) {
                    (EventSpec::Fault { line: a, .. }, EventSpec::Fault { line: b, .. }) => a == b,
                    (EventSpec::LoadStep { bus: a, .. }, EventSpec::LoadStep { bus: b, .. }) => a == b,
                    (EventSpec::GridSag { .. }, EventSpec::GridSag { .. }) => true,
                    _ => false,
                };
                let (o0, o1) = other.window();
                if same_target && t0 < o1 && o0 < t1 {
                    return Err(ConfigError::new(path, format!("overlaps events[{j}] on the same element")));
                }
            }
        }
        if !self.events.is_empty() && last_end + s.settle_window_s > s.duration_s + 1e-12 {
            return Err(ConfigError::new(
                "sim.duration_s",
                format!(
                    "run ends at {} s but events and settling need {} s",
                    s.duration_s,
                    last_end + s.settle_window_s
                ),
            ));
        }
        Ok(())
    }
}

/// Parses and validates a scenario.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::new("", e.to_string()))?;
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::new(if path == "." { String::new() } else { path }, e.into_inner().message().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
fn default_source_impedance() -> [f64; 2] {
    [grid::DEFAULT_SOURCE_IMPEDANCE.re, grid::DEFAULT_SOURCE_IMPEDANCE.im]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FAULT: &str = r#"
topology = "ring3"

[[events]]
kind = "fault"
line = 0
position = 0.5
fault_type = "ABCG"
resistance = 0.01
t_start = 0.1
t_end = 0.3
"#;

    #[test]
    fn preset_topology_and_defaults() {
        let cfg = parse_scenario(FAULT).unwrap();
        let net = cfg.build_network().unwrap();
        assert_eq!(net.lines[0].impedance, Phasor::new(0.7, 1.884));
        assert_eq!(cfg.sim.dt_neuron, 3.125e-6);
        assert_eq!(cfg.sim.dt_network, 5e-5);
        assert_eq!(cfg.sim.substeps(), 16);
        let p = cfg.neuron_params(3).unwrap();
        assert_eq!((p[0].alpha, p[0].beta, p[0].gamma, p[0].k), (1.0, 0.5, 0.005, 20.0));
        assert_eq!((p[0].v0, p[0].lambda), (17.9, 0.6));
    }

    #[test]
    fn reversed_fault_window_is_rejected() {
        let bad = FAULT.replace("t_end = 0.3", "t_end = 0.05");
        let err = parse_scenario(&bad).unwrap_err();
        assert!(err.path.starts_with("events[0]"), "{err}");
    }

    #[test]
    fn unknown_field_reports_path() {
        let bad = FAULT.replace("resistance = 0.01", "resistance = 0.01\nimpedance = 3");
        let err = parse_scenario(&bad).unwrap_err();
        assert!(err.path.contains("events"), "{err}");
        assert!(err.message.contains("impedance"), "{err}");
        let err = parse_scenario("topology = \"ring3\"\n[sim]\ndt_nueron = 1e-6\n").unwrap_err();
        assert!(err.path.contains("sim"), "{err}");
    }

    #[test]
    fn invariant_violations() {
        let e = parse_scenario("topology = \"ring9\"").unwrap_err();
        assert_eq!(e.path, "topology");
        let e = parse_scenario("topology = \"ring3\"\n[sim]\ndt_network = 4e-5\ndt_neuron = 3e-5\n").unwrap_err();
        assert_eq!(e.path, "sim.dt_network");
        let short = FAULT.replace("topology = \"ring3\"", "topology = \"ring3\"\n[sim]\nduration_s = 0.35\n");
        assert_eq!(parse_scenario(&short).unwrap_err().path, "sim.duration_s");
        let early = FAULT.replace("t_start = 0.1", "t_start = 0.04");
        assert_eq!(parse_scenario(&early).unwrap_err().path, "events[0].t_start");
        let overlap = format!("{FAULT}{}", FAULT[FAULT.find("[[events]]").unwrap()..].replace("0.1", "0.2"));
        assert!(parse_scenario(&overlap).unwrap_err().message.contains("overlaps"));
        let tau = "topology = \"ring3\"\n[neuron]\nc_m = 1e-6\n";
        assert_eq!(parse_scenario(tau).unwrap_err().path, "neuron");
    }

    #[test]
    fn explicit_topology_and_overrides() {
        let text = r#"
name = "two-bus"
topology = { buses = [{ kind = "der" }, { kind = "der", nominal_voltage = 415.0 }], lines = [{ from_bus = 0, to_bus = 1, r = 1.0, x = 2.0 }], ders = [{ bus = 0, droop_coeff = 1e-4 }, { bus = 1, droop_coeff = 2e-4 }], loads = [{ bus = 1, p = 5000.0, q = 0.0 }] }

[[ders]]
der = 1
i_max = 25.0
neuron = { membrane_set = 3, d_min = 12.0 }
"#;
        let cfg = parse_scenario(text).unwrap();
        let net = cfg.build_network().unwrap();
        assert_eq!(net.ders[1].i_max, Some(25.0));
        assert_eq!(net.lines[0].impedance, Phasor::new(1.0, 2.0));
        let p = cfg.neuron_params(2).unwrap();
        assert_eq!(p[0].c_m, 250e-6);
        assert_eq!((p[1].c_m, p[1].r_m, p[1].eta, p[1].d_min), (100e-6, 0.470, 0.0306, 12.0));
    }

    #[test]
    fn missing_source_is_a_config_error() {
        let text = r#"
topology = { buses = [{ kind = "der" }, { kind = "load" }], lines = [], ders = [{ bus = 0, droop_coeff = 1e-4 }] }
"#;
        let e = parse_scenario(text).unwrap_err();
        assert_eq!(e.path, "topology");
        assert!(e.message.contains("no DER"), "{e}");
    }

    fn arb_config() -> impl Strategy<Value = ScenarioConfig> {
        (
            prop::sample::select(presets::NAMES.to_vec()),
            0.0f64..1.0,
            prop::sample::select(grid::FaultType::ALL.to_vec()),
            0.001f64..30.0,
            0.06f64..0.2,
            0.01f64..0.2,
            any::<bool>(),
            prop::option::of(1usize..=3),
            prop::option::of(0.5f64..2.0),
        )
            .prop_map(|(topo, position, fault_type, resistance, t0, len, breakers, set, alpha)| {
                let mut cfg = ScenarioConfig::preset(topo);
                cfg.events.push(EventSpec::Fault {
                    line: 0,
                    position,
                    fault_type,
                    resistance,
                    t_start: t0,
                    t_end: t0 + len,
                });
                cfg.events.push(EventSpec::LoadStep {
                    bus: 1,
                    fraction: -0.2,
                    t_start: t0,
                    t_end: t0 + len,
                });
                cfg.sim.breakers_enabled = breakers;
                cfg.neuron.membrane_set = set;
                cfg.neuron.alpha = alpha;
                cfg.ders.push(DerOverride {
                    der: 0,
                    droop_coeff: None,
                    rated_power: None,
                    i_max: Some(40.0),
                    source_impedance: Some(default_source_impedance()),
                    meta: None,
                    neuron: Some(NeuronOverride { d_min: Some(20.0), ..Default::default() }),
                });
                cfg
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn toml_round_trip_is_lossless(cfg in arb_config()) {
            cfg.validate().unwrap();
            let text = cfg.to_toml();
            let back = parse_scenario(&text).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
