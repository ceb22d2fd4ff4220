//! Scenario configuration, the two-rate simulation loop, batches and output files.

mod batch;
mod config;
mod output;
mod runner;

pub use batch::{
    neuromorphic_trip_curve, paper_battery, parse_sweep, run_batch, run_cases, run_sweep, BatchResult, SweepSpec,
    WeightPoint,
};
pub use config::{
    parse_scenario, BusSpec, DerOverride, DerSpec, DriveChannel, EventSpec, ExplicitTopology, GridSpec, LineSpec,
    MetricsSettings, NeuronOverride, ScenarioConfig, SimSettings, TopologySpec, DEFAULT_DT_NETWORK,
};
pub use output::{
    breakers_csv, electrical_csv, emit_batch, emit_outputs, fmt_g12, membrane_csv, spikes_csv, to_rounded_json,
};
pub use runner::{run_case, run_scenario, ElectricalSample, MembraneSample, TraceBundle};
