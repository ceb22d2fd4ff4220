#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use neuroprot::error::ConfigError;
use neuroprot::grid::FaultType;
use neuroprot::metrics::{idmt_curve, IEC_SI_K, IEC_SI_N};
use neuroprot::scenario::{
    emit_batch, emit_outputs, neuromorphic_trip_curve, paper_battery, parse_scenario, parse_sweep, run_scenario,
    run_sweep, to_rounded_json, EventSpec, ScenarioConfig, SimSettings, SweepSpec,
};
use neuroprot::{Error, Result};

#[derive(Parser)]
#[command(name = "neuroprot", version, about = "Spiking-neuron microgrid protection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for batch runs.
    #[arg(long, global = true)]
    parallel: Option<usize>,

    /// Neuron integration step in seconds.
    #[arg(long, global = true)]
    dt_neuron: Option<f64>,

    /// Network solve interval in seconds.
    #[arg(long, global = true)]
    dt_network: Option<f64>,

    /// Whether trip decisions open breakers.
    #[arg(long, global = true)]
    breakers: Option<Switch>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its traces.
    Run { config: PathBuf },
    /// Expand a sweep file and run every case.
    Batch { sweep: PathBuf },
    /// Run the built-in fault and load-step campaign.
    PaperBattery,
    /// Parse and check a scenario without simulating it.
    Validate { config: PathBuf },
    /// Compare the IEC standard-inverse curve with simulated latency against fault resistance.
    IdmtCompare {
        /// Scenario with one fault event; defaults to a three-phase fault on ring3.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fault resistances in ohms.
        #[arg(long, value_delimiter = ',', default_value = "3,1,0.5,0.1,0.01,0.001")]
        resistances: Vec<f64>,
    },
}

impl Cli {
    fn apply(&self, sim: &mut SimSettings) {
        if let Some(dt) = self.dt_neuron {
            sim.dt_neuron = dt;
        }
        if let Some(dt) = self.dt_network {
            sim.dt_network = dt;
        }
        if let Some(b) = self.breakers {
            sim.breakers_enabled = matches!(b, Switch::On);
        }
    }

    fn workers(&self) -> usize {
        self.parallel
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
            .max(1)
    }

    fn out_dir(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out").join(default))
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_scenario(cli: &Cli, path: &Path) -> Result<ScenarioConfig> {
    let mut cfg = parse_scenario(&read(path)?)?;
    cli.apply(&mut cfg.sim);
    cfg.validate()?;
    Ok(cfg)
}

fn batch(cli: &Cli, mut spec: SweepSpec) -> Result<serde_json::Value> {
    cli.apply(&mut spec.sim);
    let result = run_sweep(&spec, cli.workers())?;
    let dir = cli.out_dir(&spec.name);
    let files = emit_batch(&result, &dir)?;
    let r = &result.report;
    Ok(json!({
        "cases": r.n_cases,
        "failed_cases": r.n_failed_cases,
        "accuracy_pct": r.accuracy_pct,
        "selectivity_pct": r.selectivity_pct,
        "median_latency_ms": r.median_latency_ms,
        "false_trips": r.false_trip_count,
        "files": files,
    }))
}

fn default_idmt_template() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::preset("ring3");
    cfg.name = "idmt-compare".into();
    cfg.sim.duration_s = 0.45;
    cfg.events.push(EventSpec::Fault {
        line: 0,
        position: 0.25,
        fault_type: FaultType::ABCG,
        resistance: 1.0,
        t_start: 0.1,
        t_end: 0.3,
    });
    cfg
}

fn execute(cli: &Cli) -> Result<serde_json::Value> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = load_scenario(cli, config)?;
            let bundle = run_scenario(&cfg)?;
            let files = emit_outputs(&bundle, &cli.out_dir(&cfg.name))?;
            let c = &bundle.case_result;
            Ok(json!({
                "scenario": c.scenario_id,
                "winner_der": c.winner_der,
                "tripped_line": c.tripped_line,
                "latency_ms": c.latency_ms().ok(),
                "files": files,
            }))
        }
        Command::Batch { sweep } => batch(cli, parse_sweep(&read(sweep)?)?),
        Command::PaperBattery => batch(cli, paper_battery()),
        Command::Validate { config } => {
            let cfg = load_scenario(cli, config)?;
            let net = cfg.build_network()?;
            Ok(json!({
                "valid": true,
                "scenario": cfg.name,
                "buses": net.buses.len(),
                "lines": net.lines.len(),
                "ders": net.ders.len(),
                "events": cfg.events.len(),
            }))
        }
        Command::IdmtCompare { config, resistances } => {
            let mut template = match config {
                Some(path) => load_scenario(cli, path)?,
                None => default_idmt_template(),
            };
            cli.apply(&mut template.sim);
            template.validate()?;
            if template.faults().len() != 1 {
                return Err(ConfigError::new("events", "idmt-compare needs exactly one fault event").into());
            }
            if let Some(r) = resistances.iter().find(|r| !(**r > 0.0)) {
                return Err(ConfigError::new("resistances", format!("resistance {r} must be positive")).into());
            }
            let iec = idmt_curve(&[1.5, 2.0, 3.0, 5.0, 10.0, 20.0], IEC_SI_K, IEC_SI_N, 1.0)?;
            let neuro = neuromorphic_trip_curve(&template, resistances, cli.workers());
            let value = json!({ "idmt": iec, "neuromorphic": neuro });
            if let Some(dir) = &cli.out {
                std::fs::create_dir_all(dir)
                    .and_then(|_| std::fs::write(dir.join("idmt_compare.json"), to_rounded_json(&value)))
                    .map_err(|source| Error::Io {
                        path: dir.join("idmt_compare.json"),
                        source,
                    })?;
            }
            Ok(value)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let message = e.render().to_string();
            eprintln!("{}", json!({ "error": "UsageError", "message": message.trim_end() }));
            return ExitCode::from(2);
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            print!("{}", to_rounded_json(&summary));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let mut err = json!({ "error": e.kind(), "message": e.to_string() });
            if let Some(path) = config_path(&e) {
                err["path"] = json!(path);
            }
            eprintln!("{err}");
            ExitCode::FAILURE
        }
    }
}

fn config_path(e: &Error) -> Option<&str> {
    match e {
        Error::Config(c) if !c.path.is_empty() => Some(&c.path),
        Error::AtTime { source, .. } => config_path(source),
        _ => None,
    }
}
