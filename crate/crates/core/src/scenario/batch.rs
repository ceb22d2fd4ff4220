use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{EventSpec, NeuronOverride, ScenarioConfig, SimSettings};
use super::runner::{empty_case, run_case};
use crate::error::{ConfigError, Result};
use crate::grid::{presets, FaultType};
use crate::metrics::{CaseResult, CurveRow, MetricsReport, TripCurve, DEFAULT_ACCURACY_WINDOW_MS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightPoint {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// Cross-product description of a batch of scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub name: String,
    pub topologies: Vec<String>,
    pub fault_types: Vec<FaultType>,
    pub resistances: Vec<f64>,
    pub positions: Vec<f64>,
    /// Uniform jitter added to every fault position, drawn from the seed.
    pub position_jitter: f64,
    /// Disturbance weight grid; empty keeps the neuron defaults.
    pub weights: Vec<WeightPoint>,
    pub fault_start_s: f64,
    pub fault_duration_s: f64,
    pub load_topologies: Vec<String>,
    pub load_fractions: Vec<f64>,
    /// Load cases drawn from all bus subsets × fractions; 0 disables them.
    pub load_cases: usize,
    pub seed: u64,
    pub neuron: NeuronOverride,
    pub sim: SimSettings,
    pub accuracy_window_ms: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            name: "sweep".into(),
            topologies: vec!["ring3".into(), "mesh4".into()],
            fault_types: vec![FaultType::AG, FaultType::AB, FaultType::ABG, FaultType::ABC, FaultType::ABCG],
            resistances: vec![0.001, 0.01, 0.1, 0.5, 1.0, 3.0],
            positions: vec![0.1, 0.5, 0.9],
            position_jitter: 0.0,
            weights: Vec::new(),
            fault_start_s: 0.1,
            fault_duration_s: 0.2,
            load_topologies: vec!["ring3".into(), "mesh4".into(), "ring4".into()],
            load_fractions: vec![0.2, -0.2, 0.4, -0.4],
            load_cases: 125,
            seed: 7,
            neuron: NeuronOverride::default(),
            sim: SimSettings {
                duration_s: 0.45,
                ..SimSettings::default()
            },
            accuracy_window_ms: DEFAULT_ACCURACY_WINDOW_MS,
        }
    }
}

/// The reference campaign: 630 fault cases on ring3 and mesh4 plus 125 load steps.
pub fn paper_battery() -> SweepSpec {
    SweepSpec {
        name: "paper-battery".into(),
        ..SweepSpec::default()
    }
}

pub fn parse_sweep(text: &str) -> std::result::Result<SweepSpec, ConfigError> {
    let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::new("", e.to_string()))?;
    let spec: SweepSpec = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::new(if path == "." { String::new() } else { path }, e.into_inner().message().to_string())
    })?;
    Ok(spec)
}

fn fmt_num(x: f64) -> String {
    let s = format!("{x}");
    s.replace('-', "m")
}

impl SweepSpec {
    fn template(&self, topology: &str, name: String) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::preset(topology);
        cfg.name = name;
        cfg.neuron = self.neuron;
        cfg.sim = self.sim.clone();
        cfg.metrics.accuracy_window_ms = self.accuracy_window_ms;
        cfg
    }

    /// Expands the sweep into scenarios: faults first, in topology, line,
    /// position, type, resistance and weight order, then load cases.
    pub fn expand(&self) -> std::result::Result<Vec<ScenarioConfig>, ConfigError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::new();
        let t0 = self.fault_start_s;
        let t1 = self.fault_start_s + self.fault_duration_s;
        let weights: Vec<Option<WeightPoint>> = if self.weights.is_empty() {
            vec![None]
        } else {
            self.weights.iter().copied().map(Some).collect()
        };
        for (ti, topo) in self.topologies.iter().enumerate() {
            let net = presets::preset(topo)
                .ok_or_else(|| ConfigError::new(format!("topologies[{ti}]"), format!("unknown preset `{topo}`")))?
                .network;
            for line in 0..net.lines.len() {
                for &pos in &self.positions {
                    for &ft in &self.fault_types {
                        for &r in &self.resistances {
                            let jitter = if self.position_jitter > 0.0 {
                                rng.random_range(-self.position_jitter..=self.position_jitter)
                            } else {
                                0.0
                            };
                            let position = (pos + jitter).clamp(0.0, 1.0);
                            for w in &weights {
                                let mut name =
                                    format!("{}-{topo}-L{line}-p{}-{ft}-R{}", self.name, fmt_num(pos), fmt_num(r));
                                let mut cfg = self.template(topo, String::new());
                                if let Some(w) = w {
                                    name.push_str(&format!(
                                        "-a{}-b{}-g{}",
                                        fmt_num(w.alpha),
                                        fmt_num(w.beta),
                                        fmt_num(w.gamma)
                                    ));
                                    cfg.neuron.alpha = Some(w.alpha);
                                    cfg.neuron.beta = Some(w.beta);
                                    cfg.neuron.gamma = Some(w.gamma);
                                }
                                cfg.name = name;
                                cfg.events.push(EventSpec::Fault {
                                    line,
                                    position,
                                    fault_type: ft,
                                    resistance: r,
                                    t_start: t0,
                                    t_end: t1,
                                });
                                out.push(cfg);
                            }
                        }
                    }
                }
            }
        }
        if self.load_cases > 0 {
            let mut combos: Vec<(String, Vec<usize>, f64)> = Vec::new();
            for (ti, topo) in self.load_topologies.iter().enumerate() {
                let net = presets::preset(topo)
                    .ok_or_else(|| {
                        ConfigError::new(format!("load_topologies[{ti}]"), format!("unknown preset `{topo}`"))
                    })?
                    .network;
                let mut buses: Vec<usize> = net.loads.iter().map(|l| l.bus).collect();
                buses.sort_unstable();
                buses.dedup();
                for mask in 1u32..(1 << buses.len()) {
                    let subset: Vec<usize> =
                        buses.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, &b)| b).collect();
                    for &f in &self.load_fractions {
                        combos.push((topo.clone(), subset.clone(), f));
                    }
                }
            }
            let mut picked: Vec<usize> = (0..combos.len()).collect();
            picked.shuffle(&mut rng);
            picked.truncate(self.load_cases);
            picked.sort_unstable();
            for i in picked {
                let (topo, buses, f) = &combos[i];
                let tag: Vec<String> = buses.iter().map(|b| (b + 1).to_string()).collect();
                let mut cfg = self.template(topo, format!("{}-{topo}-load-B{}-f{}", self.name, tag.join(""), fmt_num(*f)));
                for &bus in buses {
                    cfg.events.push(EventSpec::LoadStep {
                        bus,
                        fraction: *f,
                        t_start: t0,
                        t_end: t1,
                    });
                }
                out.push(cfg);
            }
        }
        for (i, cfg) in out.iter().enumerate() {
            cfg.validate()
                .map_err(|e| ConfigError::new(format!("case[{i}] ({}).{}", cfg.name, e.path), e.message))?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub cases: Vec<CaseResult>,
    pub report: MetricsReport,
}

/// Runs every case; a failing case is recorded with its error and the
/// batch continues. Results keep the input order for any `parallelism`.
pub fn run_cases(configs: &[ScenarioConfig], parallelism: usize) -> Vec<CaseResult> {
    let one = |cfg: &ScenarioConfig| {
        run_case(cfg).unwrap_or_else(|e| CaseResult {
            error: Some(e.to_string()),
            ..empty_case(cfg)
        })
    };
    if parallelism <= 1 {
        return configs.iter().map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .expect("thread pool");
    pool.install(|| configs.par_iter().map(one).collect())
}

pub fn run_batch(configs: &[ScenarioConfig], parallelism: usize, window_ms: f64) -> Result<BatchResult> {
    let cases = run_cases(configs, parallelism);
    let report = MetricsReport::from_cases(&cases, window_ms)?;
    Ok(BatchResult { cases, report })
}

pub fn run_sweep(spec: &SweepSpec, parallelism: usize) -> Result<BatchResult> {
    run_batch(&spec.expand()?, parallelism, spec.accuracy_window_ms)
}

/// Latency of a single-fault template swept over fault resistance, as trip
/// time against fault conductance.
pub fn neuromorphic_trip_curve(template: &ScenarioConfig, resistances: &[f64], parallelism: usize) -> TripCurve {
    let configs: Vec<ScenarioConfig> = resistances
        .iter()
        .map(|&r| {
            let mut cfg = template.clone();
            cfg.name = format!("{}-R{}", template.name, fmt_num(r));
            for ev in &mut cfg.events {
                if let EventSpec::Fault { resistance, .. } = ev {
                    *resistance = r;
                }
            }
            cfg
        })
        .collect();
    let cases = run_cases(&configs, parallelism);
    TripCurve {
        rows: resistances
            .iter()
            .zip(&cases)
            .map(|(&r, c)| CurveRow {
                severity: 1.0 / r,
                trip_time_ms: c.latency_ms().ok(),
                label: format!("R={r}"),
            })
            .collect(),
    }
    .sorted()
}
