use super::{Baseline, BusSolution, DerUnit, Measurement, PhasorNetwork};
use crate::error::GridError;

fn at_der(der: &DerUnit, sol: &BusSolution) -> usize {
    sol.der_buses
        .iter()
        .position(|&b| b == der.bus)
        .expect("DER is not part of this solution")
}

/// Terminal measurement of one DER: bus voltage, output current and
/// three-phase active power.
pub fn measure(der: &DerUnit, sol: &BusSolution, t: f64) -> Measurement {
    let k = at_der(der, sol);
    let v = sol.bus_voltages[der.bus];
    let i = sol.der_currents[k];
    Measurement {
        t,
        v_rms: v.norm(),
        i_rms: i.norm(),
        p: 3.0 * (v * i.conj()).re,
    }
}

/// Measurement of one line as seen from the breaker at `bus`: bus voltage
/// and the current and power flowing from the bus into that line.
pub fn measure_line(network: &PhasorNetwork, sol: &BusSolution, bus: usize, line: usize, t: f64) -> Measurement {
    let l = &network.lines[line];
    let v = sol.bus_voltages[bus];
    let flow = sol.line_currents[line];
    let i = match l.end_at(bus) {
        Some(super::LineEnd::From) => flow.from_end,
        Some(super::LineEnd::To) => flow.to_end,
        None => panic!("line {line} is not attached to bus {bus}"),
    };
    Measurement {
        t,
        v_rms: v.norm(),
        i_rms: i.norm(),
        p: 3.0 * (v * i.conj()).re,
    }
}

/// Channel-wise mean of a pre-disturbance window.
///
/// `event_times` are the scheduled disturbance instants; none may fall inside
/// the window's time span.
pub fn capture_baseline(window: &[Measurement], event_times: &[f64]) -> Result<Baseline, GridError> {
    let (Some(first), Some(last)) = (window.first(), window.last()) else {
        return Err(GridError::EmptyBaselineWindow);
    };
    if let Some(&event) = event_times.iter().find(|&&e| e >= first.t && e <= last.t) {
        return Err(GridError::BaselineOverlapsEvent {
            start: first.t,
            end: last.t,
            event,
        });
    }
    let n = window.len() as f64;
    let mut b = Baseline::default();
    for m in window {
        b.v0 += m.v_rms;
        b.i0 += m.i_rms;
        b.p0 += m.p;
    }
    b.v0 /= n;
    b.i0 /= n;
    b.p0 /= n;
    Ok(b)
}
