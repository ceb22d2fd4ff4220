//! First-to-spike arbitration and breaker actuation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::ProtectionError;
use crate::grid::{BreakerId, LineEnd, PhasorNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpikeKind {
    Input,
    Output,
}

impl SpikeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SpikeKind::Input => "input",
            SpikeKind::Output => "output",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeEvent {
    pub t: f64,
    pub der_id: usize,
    pub kind: SpikeKind,
    pub line_id: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinePriority {
    pub der_id: usize,
    pub line_id: usize,
    pub pi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineAggregate {
    /// Sum of the per-line disturbance channels.
    pub total_drive: f64,
    pub priorities: Vec<LinePriority>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripDecision {
    pub winner_der: usize,
    pub t_ftts: f64,
    pub target_line: usize,
    pub breakers: Vec<BreakerId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakerAction {
    Open,
    /// Command for a breaker that was already open; state unchanged.
    AlreadyOpen,
}

impl BreakerAction {
    pub fn as_str(self) -> &'static str {
        match self {
            BreakerAction::Open => "open",
            BreakerAction::AlreadyOpen => "already_open",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakerEvent {
    pub t: f64,
    pub breaker: BreakerId,
    pub label: String,
    pub action: BreakerAction,
}

/// Line priority index `1 + k·D`.
pub fn line_priority(d: f64, k: f64) -> f64 {
    1.0 + k * d
}

/// Per-line disturbance channels of one DER, `(line_id, D)` in any order.
pub fn aggregate_lines(der_id: usize, per_line: &[(usize, f64)], k: f64) -> Result<LineAggregate, ProtectionError> {
    if per_line.is_empty() {
        return Err(ProtectionError::NoConnectedLines);
    }
    Ok(LineAggregate {
        total_drive: per_line.iter().map(|&(_, d)| d).sum(),
        priorities: per_line
            .iter()
            .map(|&(line_id, d)| LinePriority {
                der_id,
                line_id,
                pi: line_priority(d, k),
            })
            .collect(),
    })
}

/// Line with the highest priority; equal priorities go to the lowest line id.
pub fn select_faulted_line(priorities: &[LinePriority]) -> Result<usize, ProtectionError> {
    priorities
        .iter()
        .min_by(|a, b| b.pi.total_cmp(&a.pi).then(a.line_id.cmp(&b.line_id)))
        .map(|p| p.line_id)
        .ok_or(ProtectionError::NoConnectedLines)
}

/// Earliest first output spike. Spikes less than `tie_window` after the
/// earliest one tie with it and the lowest DER id among them wins.
pub fn arbitrate_ftts(first_spikes: &BTreeMap<usize, f64>, tie_window: f64) -> Result<(usize, f64), ProtectionError> {
    let t_min = first_spikes
        .values()
        .copied()
        .min_by(f64::total_cmp)
        .ok_or(ProtectionError::NoSpike)?;
    // Sample times are integer multiples of dt, so adjacent samples can differ
    // from dt by an ulp; keep the comparison clear of that.
    let window = tie_window * (1.0 - 1e-9);
    let (&der, &t) = first_spikes
        .iter()
        .find(|&(_, &t)| t - t_min < window || t == t_min)
        .expect("minimum is present");
    Ok((der, t))
}

/// Both ends of the target line.
pub fn line_breakers(network: &PhasorNetwork, line: usize) -> Result<Vec<BreakerId>, ProtectionError> {
    if line >= network.lines.len() {
        return Err(ProtectionError::UnknownLine(line));
    }
    Ok(vec![
        BreakerId { line, end: LineEnd::From },
        BreakerId { line, end: LineEnd::To },
    ])
}

pub fn decide_trip(
    network: &PhasorNetwork,
    winner_der: usize,
    t_ftts: f64,
    priorities: &[LinePriority],
) -> Result<TripDecision, ProtectionError> {
    let target_line = select_faulted_line(priorities)?;
    Ok(TripDecision {
        winner_der,
        t_ftts,
        target_line,
        breakers: line_breakers(network, target_line)?,
    })
}

/// Opens the commanded breakers at `t_open`. Breakers that are already open
/// are logged as redundant commands.
pub fn trip_breakers(
    decision: &TripDecision,
    network: &mut PhasorNetwork,
    t_open: f64,
) -> Result<Vec<BreakerEvent>, ProtectionError> {
    let mut events = Vec::with_capacity(decision.breakers.len());
    for &b in &decision.breakers {
        let line = network.lines.get_mut(b.line).ok_or(ProtectionError::UnknownLine(b.line))?;
        let state = line.breaker_mut(b.end);
        let action = if state.is_closed() {
            *state = crate::grid::BreakerState::Open;
            BreakerAction::Open
        } else {
            BreakerAction::AlreadyOpen
        };
        events.push(BreakerEvent {
            t: t_open,
            breaker: b,
            label: line.breaker_label(b.end),
            action,
        });
    }
    Ok(events)
}
