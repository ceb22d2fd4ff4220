use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::config::{DriveChannel, EventSpec, ScenarioConfig};
use crate::error::{Error, Result};
use crate::ftts::{self, BreakerAction, BreakerEvent, LinePriority, SpikeEvent, SpikeKind, TripDecision};
use crate::grid::{
    self, capture_baseline, electrical_distance, measure, measure_line, Baseline, BusSolution, Dispatch, Measurement,
    PhasorNetwork,
};
use crate::metrics::{detect_fault_onset, CaseEvent, CaseResult, SpikeCount};
use crate::relay::{
    advance_membrane, deviations, disturbance_index, encode_input_spike, step_neuron, NeuronParams, NeuronState,
    SlidingRms, SpikeEncoder, StepMode,
};

/// Relative tolerance under which two electrical distances count as equal.
const DISTANCE_TIE_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MembraneSample {
    pub t: f64,
    pub der_id: usize,
    pub v_m: f64,
    pub v_th: f64,
    pub d: f64,
}

/// Magnitudes of the network state at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectricalSample {
    pub t: f64,
    /// Line-to-neutral RMS volts per bus.
    pub bus_voltages: Vec<f64>,
    /// RMS amperes per line, measured at the from-bus end.
    pub line_currents: Vec<f64>,
    /// RMS amperes per DER terminal.
    pub der_currents: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceBundle {
    pub spike_log: Vec<SpikeEvent>,
    pub membrane_trace: Vec<MembraneSample>,
    pub breaker_log: Vec<BreakerEvent>,
    pub electrical_trace: Vec<ElectricalSample>,
    pub decisions: Vec<TripDecision>,
    pub case_result: CaseResult,
}

/// Filtered measurement channel with its own baseline and encoder.
#[derive(Debug, Clone)]
struct Channel {
    rms: SlidingRms,
    history: VecDeque<Measurement>,
    history_len: usize,
    last: Measurement,
    baseline: Baseline,
    encoder: SpikeEncoder,
}

impl Channel {
    fn new(rms_len: usize, history_len: usize) -> Self {
        Self {
            rms: SlidingRms::new(rms_len),
            history: VecDeque::with_capacity(history_len),
            history_len,
            last: Measurement::default(),
            baseline: Baseline::default(),
            encoder: SpikeEncoder::default(),
        }
    }

    fn push(&mut self, raw: &Measurement) {
        self.last = self.rms.push(raw);
        if self.history.len() == self.history_len {
            self.history.pop_front();
        }
        self.history.push_back(self.last);
    }

    fn rebaseline(&mut self, event_times: &[f64]) -> std::result::Result<Baseline, crate::error::GridError> {
        let window: Vec<Measurement> = self.history.iter().copied().collect();
        self.baseline = capture_baseline(&window, event_times)?;
        Ok(self.baseline)
    }
}

#[derive(Debug, Clone)]
struct Relay {
    params: NeuronParams,
    state: NeuronState,
    terminal: Channel,
    /// `(line id, channel)` for every line incident to the DER bus.
    lines: Vec<(usize, Channel)>,
    counts: SpikeCount,
    d: f64,
}

impl Relay {
    /// Per-line floored disturbance indices against the line baselines.
    fn line_indices(&self) -> Vec<(usize, f64)> {
        self.lines
            .iter()
            .map(|(id, ch)| (*id, disturbance_index(&deviations(&ch.last, &ch.baseline), &self.params)))
            .collect()
    }

    fn reset_episode(&mut self) {
        self.state.reset_episode();
        for (_, ch) in &mut self.lines {
            ch.encoder.reset();
        }
    }
}

/// Time-varying part of the network that forces a re-solve when it changes.
#[derive(Debug, Clone, PartialEq)]
struct ElectricalState {
    active_faults: Vec<usize>,
    load_scale: Vec<f64>,
    sag_scale: f64,
    breakers: Vec<(grid::BreakerState, grid::BreakerState)>,
}

impl ElectricalState {
    fn same_healthy_network(&self, other: &Self) -> bool {
        self.load_scale == other.load_scale && self.sag_scale == other.sag_scale && self.breakers == other.breakers
    }
}

struct Simulation<'a> {
    cfg: &'a ScenarioConfig,
    base: PhasorNetwork,
    /// Breaker states as actuated so far.
    switched: PhasorNetwork,
    relays: Vec<Relay>,
    mode: StepMode,
    record: bool,
    bundle: TraceBundle,
    state: Option<ElectricalState>,
    dispatch: Option<Dispatch>,
    network: PhasorNetwork,
    solution: Option<BusSolution>,
    raw_der: Vec<Measurement>,
    raw_lines: Vec<Vec<Measurement>>,
    /// Unfiltered DER currents at network-step instants, for onset detection.
    current_trace: Vec<Vec<(f64, f64)>>,
    pending: Vec<(f64, TripDecision)>,
    armed: bool,
    episode_open: bool,
    decided: bool,
    quiet_since: Option<f64>,
    rebaseline_at: Option<f64>,
    first_decision: Option<TripDecision>,
    first_output_spike: Option<f64>,
}

impl<'a> Simulation<'a> {
    fn new(cfg: &'a ScenarioConfig, record: bool) -> Result<Self> {
        let base = cfg.build_network()?;
        let params = cfg.neuron_params(base.ders.len())?;
        let sim = &cfg.sim;
        let rms_len = sim.steps_for(sim.rms_window_s).max(1);
        let history_len = sim.steps_for(sim.baseline_window_s).max(1);
        let relays = base
            .ders
            .iter()
            .zip(params)
            .map(|(der, p)| Relay {
                params: p,
                state: NeuronState::new(Baseline::default(), &p),
                terminal: Channel::new(rms_len, history_len),
                lines: base
                    .lines_at(der.bus)
                    .into_iter()
                    .map(|l| (l, Channel::new(rms_len, history_len)))
                    .collect(),
                counts: SpikeCount::default(),
                d: 0.0,
            })
            .collect::<Vec<_>>();
        let n_der = base.ders.len();
        Ok(Self {
            cfg,
            switched: base.clone(),
            network: base.clone(),
            base,
            relays,
            mode: StepMode {
                drive: sim.membrane_drive,
                latch: sim.latch_mode,
            },
            record,
            bundle: TraceBundle {
                spike_log: Vec::new(),
                membrane_trace: Vec::new(),
                breaker_log: Vec::new(),
                electrical_trace: Vec::new(),
                decisions: Vec::new(),
                case_result: empty_case(cfg),
            },
            state: None,
            dispatch: None,
            solution: None,
            raw_der: vec![Measurement::default(); n_der],
            raw_lines: Vec::new(),
            current_trace: vec![Vec::new(); n_der],
            pending: Vec::new(),
            armed: false,
            episode_open: false,
            decided: false,
            quiet_since: None,
            rebaseline_at: None,
            first_decision: None,
            first_output_spike: None,
        })
    }

    fn electrical_state(&self, t: f64) -> ElectricalState {
        let mut load_scale = vec![1.0; self.base.loads.len()];
        let mut sag_scale = 1.0;
        let mut active_faults = Vec::new();
        for (i, ev) in self.cfg.events.iter().enumerate() {
            if !ev.is_active(t) {
                continue;
            }
            match *ev {
                EventSpec::LoadStep { bus, fraction, .. } => {
                    for (k, load) in self.base.loads.iter().enumerate() {
                        if load.bus == bus {
                            load_scale[k] *= 1.0 + fraction;
                        }
                    }
                }
                EventSpec::Fault { .. } => active_faults.push(i),
                EventSpec::GridSag { depth, .. } => sag_scale *= 1.0 - depth,
            }
        }
        ElectricalState {
            active_faults,
            load_scale,
            sag_scale,
            breakers: self.switched.lines.iter().map(|l| (l.breaker_from, l.breaker_to)).collect(),
        }
    }

    /// Network step: actuate due breakers, re-solve if anything changed and
    /// refresh the raw measurements.
    fn network_step(&mut self, t: f64) -> Result<()> {
        let due: Vec<TripDecision> = {
            let (now, later): (Vec<_>, Vec<_>) = self.pending.drain(..).partition(|(t_open, _)| *t_open <= t);
            self.pending = later;
            now.into_iter().map(|(_, d)| d).collect()
        };
        for decision in due {
            let t_open = decision.t_ftts + self.cfg.sim.breaker_delay_s;
            let events = ftts::trip_breakers(&decision, &mut self.switched, t_open)?;
            if events.iter().any(|e| e.action == BreakerAction::Open) {
                self.rebaseline_at = Some(t + self.cfg.sim.settle_window_s);
            }
            self.bundle.case_result.breaker_operations +=
                events.iter().filter(|e| e.action == BreakerAction::Open).count();
            for e in events.iter().filter(|e| e.action == BreakerAction::Open) {
                let opened = &mut self.bundle.case_result.opened_lines;
                if let Err(pos) = opened.binary_search(&e.breaker.line) {
                    opened.insert(pos, e.breaker.line);
                }
            }
            self.bundle.breaker_log.extend(events);
        }

        let state = self.electrical_state(t);
        if self.state.as_ref() != Some(&state) {
            let mut net = self.switched.clone();
            for (load, &s) in net.loads.iter_mut().zip(&state.load_scale) {
                load.p *= s;
                load.q *= s;
            }
            if let Some(g) = net.grid.as_mut() {
                g.voltage_scale = state.sag_scale;
            }
            net.faults = state
                .active_faults
                .iter()
                .filter_map(|&i| self.cfg.events[i].fault_spec())
                .collect();
            let redispatch = match &self.state {
                Some(prev) => !prev.same_healthy_network(&state),
                None => true,
            };
            if redispatch || self.dispatch.is_none() {
                self.dispatch = Some(grid::dispatch(&net).map_err(|e| at(t, e))?);
            }
            let sol = grid::solve_with_dispatch(&net, self.dispatch.as_ref().expect("dispatched")).map_err(|e| at(t, e))?;
            self.raw_der = net.ders.iter().map(|d| measure(d, &sol, t)).collect();
            self.raw_lines = net
                .ders
                .iter()
                .zip(&self.relays)
                .map(|(d, r)| r.lines.iter().map(|(l, _)| measure_line(&net, &sol, d.bus, *l, t)).collect())
                .collect();
            self.network = net;
            self.solution = Some(sol);
            self.state = Some(state);
        }
        if self.armed {
            for (k, m) in self.raw_der.iter().enumerate() {
                self.current_trace[k].push((t, m.i_rms));
            }
        }
        Ok(())
    }

    fn record_electrical(&mut self, t: f64) {
        let sol = self.solution.as_ref().expect("solved");
        self.bundle.electrical_trace.push(ElectricalSample {
            t,
            bus_voltages: sol.bus_voltages.iter().map(|v| v.norm()).collect(),
            line_currents: sol.line_currents.iter().map(|f| f.from_end.norm()).collect(),
            der_currents: sol.der_currents.iter().map(|i| i.norm()).collect(),
        });
    }

    fn capture_baselines(&mut self, event_times: &[f64]) -> Result<()> {
        for r in &mut self.relays {
            r.state.baseline = r.terminal.rebaseline(event_times)?;
            for (_, ch) in &mut r.lines {
                ch.rebaseline(event_times)?;
            }
        }
        Ok(())
    }

    fn step_relays(&mut self, t: f64) -> Result<Vec<usize>> {
        let mut fired = Vec::new();
        for (k, r) in self.relays.iter_mut().enumerate() {
            r.terminal.push(&self.raw_der[k]);
            for (j, (_, ch)) in r.lines.iter_mut().enumerate() {
                ch.push(&self.raw_lines[k][j]);
            }
            if !self.armed {
                continue;
            }
            let out = match self.cfg.sim.drive_channel {
                DriveChannel::Terminal => {
                    let before = r.state.encoder.n;
                    let out = step_neuron(&mut r.state, &r.terminal.last, t, &r.params, self.mode)
                        .map_err(|e| at(t, e))?;
                    r.counts.input += r.state.encoder.n - before;
                    if out.input_spike && self.record {
                        self.bundle.spike_log.push(SpikeEvent {
                            t,
                            der_id: k,
                            kind: SpikeKind::Input,
                            line_id: None,
                        });
                    }
                    out
                }
                DriveChannel::LineSum => {
                    let dev = deviations(&r.terminal.last, &r.state.baseline);
                    let mut d_total = 0.0;
                    let mut drive = 0.0;
                    let mut any = false;
                    for (line, ch) in &mut r.lines {
                        let d = disturbance_index(&deviations(&ch.last, &ch.baseline), &r.params);
                        let spike = encode_input_spike(&mut ch.encoder, d, t, &r.params).map_err(|e| at(t, e))?;
                        d_total += d;
                        drive += self.mode.drive.input(r.params.input_gain, spike, d);
                        if spike {
                            any = true;
                            r.counts.input += 1;
                            if self.record {
                                self.bundle.spike_log.push(SpikeEvent {
                                    t,
                                    der_id: k,
                                    kind: SpikeKind::Input,
                                    line_id: Some(*line),
                                });
                            }
                        }
                    }
                    advance_membrane(&mut r.state, &dev, d_total, any, drive, &r.params, self.mode.latch)
                }
            };
            r.d = out.d;
            if out.output_spike {
                r.counts.output += 1;
                fired.push(k);
                if self.record {
                    self.bundle.spike_log.push(SpikeEvent {
                        t,
                        der_id: k,
                        kind: SpikeKind::Output,
                        line_id: None,
                    });
                }
            }
        }
        Ok(fired)
    }

    fn update_episode(&mut self, t: f64, fired: &[usize]) -> Result<()> {
        let disturbed = self.relays.iter().any(|r| r.d > 0.0);
        if !self.episode_open && (disturbed || !fired.is_empty()) {
            self.episode_open = true;
            self.decided = false;
            self.quiet_since = None;
        }
        if !fired.is_empty() {
            self.first_output_spike.get_or_insert(t);
        }
        if self.episode_open && !self.decided && !fired.is_empty() {
            let first: BTreeMap<usize, f64> = fired.iter().map(|&k| (k, t)).collect();
            let (winner, t_ftts) = ftts::arbitrate_ftts(&first, self.cfg.sim.dt_neuron)?;
            let r = &self.relays[winner];
            let agg = ftts::aggregate_lines(winner, &r.line_indices(), r.params.k)?;
            let priorities: Vec<LinePriority> = agg.priorities;
            let decision = ftts::decide_trip(&self.switched, winner, t_ftts, &priorities)?;
            self.decided = true;
            if self.first_decision.is_none() {
                self.first_decision = Some(decision.clone());
            }
            if self.cfg.sim.breakers_enabled {
                self.pending.push((t_ftts + self.cfg.sim.breaker_delay_s, decision.clone()));
            }
            self.bundle.decisions.push(decision);
        }
        if self.episode_open {
            if disturbed {
                self.quiet_since = None;
            } else {
                let since = *self.quiet_since.get_or_insert(t);
                if t - since >= self.cfg.sim.settle_window_s {
                    self.episode_open = false;
                    self.quiet_since = None;
                    for r in &mut self.relays {
                        r.reset_episode();
                    }
                }
            }
        }
        Ok(())
    }

    fn record_membrane(&mut self, t: f64) {
        for (k, r) in self.relays.iter().enumerate() {
            self.bundle.membrane_trace.push(MembraneSample {
                t,
                der_id: k,
                v_m: r.state.v_m,
                v_th: r.state.v_th,
                d: r.d,
            });
        }
    }

    fn run(mut self) -> Result<TraceBundle> {
        let sim = &self.cfg.sim;
        let dt = sim.dt_neuron;
        let n_steps = sim.steps_for(sim.duration_s);
        let substeps = sim.substeps().max(1);
        let baseline_step = sim.steps_for(sim.baseline_at_s);
        let event_starts: Vec<f64> = self.cfg.events.iter().map(|e| e.window().0).collect();
        for s in 0..=n_steps {
            let t = s as f64 * dt;
            if s % substeps == 0 {
                self.network_step(t)?;
            }
            if self.record && s % sim.trace_decimation == 0 {
                self.record_electrical(t);
            }
            let fired = self.step_relays(t)?;
            if s == baseline_step {
                self.capture_baselines(&event_starts).map_err(|e| at(t, e))?;
                self.armed = true;
                for (k, m) in self.raw_der.iter().enumerate() {
                    self.current_trace[k].push((t, m.i_rms));
                }
            }
            if self.armed {
                self.update_episode(t, &fired)?;
            }
            if self.rebaseline_at.is_some_and(|tb| t >= tb) {
                self.rebaseline_at = None;
                self.capture_baselines(&[]).map_err(|e| at(t, e))?;
            }
            if self.record && s % sim.trace_decimation == 0 {
                self.record_membrane(t);
            }
        }
        self.finish()
    }

    fn finish(mut self) -> Result<TraceBundle> {
        let faults = self.cfg.faults();
        let case = &mut self.bundle.case_result;
        case.spike_counts = self.relays.iter().map(|r| r.counts).collect();
        case.t_first_spike = self.first_output_spike;
        case.winner_der = self.first_decision.as_ref().map(|d| d.winner_der);
        if self.cfg.sim.breakers_enabled {
            case.tripped_line = self.first_decision.as_ref().map(|d| d.target_line);
        }
        if let [fault] = faults.as_slice() {
            let distances = self
                .base
                .ders
                .iter()
                
                .map(|der| electrical_distance(&self.base, der, fault))
                .collect::<std::result::Result<Vec<f64>, _>>()?;
            let best = distances.iter().copied().fold(f64::INFINITY, f64::min);
            case.nearest_ders = distances
                .iter()
                .enumerate()
                .filter(|(_, &d)| d <= best * (1.0 + DISTANCE_TIE_RTOL))
                .map(|(k, _)| k)
                .collect();
            let onset = self
                .relays
                .iter()
                .zip(&self.current_trace)
                .filter_map(|(r, trace)| {
                    let from = trace.partition_point(|&(t, _)| t < fault.t_start);
                    detect_fault_onset(&trace[from..], r.state.baseline.i0.max(f64::MIN_POSITIVE))
                })
                .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.min(t))));
            // Quiet or undetectable onsets fall back to the scheduled fault instant.
            let onset = onset.unwrap_or(fault.t_start);
            case.t_onset = Some(match case.t_first_spike {
                Some(spike) if spike < onset => fault.t_start,
                _ => onset,
            });
        }
        Ok(self.bundle)
    }
}

fn at(t: f64, e: impl Into<Error>) -> Error {
    Error::AtTime {
        t,
        source: Box::new(e.into()),
    }
}

pub(crate) fn empty_case(cfg: &ScenarioConfig) -> CaseResult {
    CaseResult {
        scenario_id: cfg.name.clone(),
        event: classify_events(&cfg.events),
        t_onset: None,
        t_first_spike: None,
        winner_der: None,
        nearest_ders: Vec::new(),
        tripped_line: None,
        spike_counts: Vec::new(),
        breaker_operations: 0,
        opened_lines: Vec::new(),
        error: None,
    }
}

fn classify_events(events: &[EventSpec]) -> CaseEvent {
    if let [single] = events {
        if let Some(f) = single.fault_spec() {
            return CaseEvent::Fault(f);
        }
    }
    let steps: Vec<(usize, f64)> = events
        .iter()
        .filter_map(|e| match *e {
            EventSpec::LoadStep { bus, fraction, .. } => Some((bus, fraction)),
            _ => None,
        })
        .collect();
    if !steps.is_empty() && steps.len() == events.len() && steps.iter().all(|s| s.1 == steps[0].1) {
        return CaseEvent::LoadStep {
            buses: steps.iter().map(|s| s.0).collect(),
            fraction: steps[0].1,
        };
    }
    let kinds: Vec<&str> = events
        .iter()
        .map(|e| match e {
            EventSpec::LoadStep { .. } => "load_step",
            EventSpec::Fault { .. } => "fault",
            EventSpec::GridSag { .. } => "grid_sag",
        })
        .collect();
    CaseEvent::Other(if kinds.is_empty() { "none".into() } else { kinds.join("+") })
}

/// Runs one scenario and keeps every trace.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<TraceBundle> {
    cfg.validate()?;
    Simulation::new(cfg, true)?.run()
}

/// Runs one scenario for its case result only.
pub fn run_case(cfg: &ScenarioConfig) -> Result<CaseResult> {
    cfg.validate()?;
    Ok(Simulation::new(cfg, false)?.run()?.case_result)
}
