//! Per-DER leaky integrate-and-fire relay.

mod rms;

use serde::{Deserialize, Serialize};

use crate::error::RelayError;
use crate::grid::{Baseline, Measurement};

pub use rms::SlidingRms;

/// Default sampling interval of the neuron, 3.125 µs.
pub const DEFAULT_DT: f64 = 3.125e-6;

/// Default noise floor. Load disturbances on the presets stay below it and
/// faults within the tested resistance range rise above it.
pub const DEFAULT_D_MIN: f64 = 24.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuronParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k: f64,
    /// Membrane capacitance in farads.
    pub c_m: f64,
    /// Membrane resistance in ohms.
    pub r_m: f64,
    /// Base threshold U_0 in volts.
    pub v0: f64,
    pub eta: f64,
    pub lambda: f64,
    pub d_min: f64,
    pub dt: f64,
    /// Scale applied to the membrane input term.
    pub input_gain: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            gamma: 0.005,
            k: 20.0,
            c_m: 250e-6,
            r_m: 0.644,
            v0: 17.9,
            eta: 0.008,
            lambda: 0.6,
            d_min: DEFAULT_D_MIN,
            dt: DEFAULT_DT,
            input_gain: 50.0,
        }
    }
}

impl NeuronParams {
    /// Membrane parameter sets 1 to 3 of the tabulated neuron study.
    pub fn membrane_set(neuron: usize) -> Option<Self> {
        let (c_m, r_m, eta) = match neuron {
            1 => (200e-6, 0.432, 0.0156),
            2 => (250e-6, 0.644, 0.0081),
            3 => (100e-6, 0.470, 0.0306),
            _ => return None,
        };
        Some(Self {
            c_m,
            r_m,
            eta,
            ..Self::default()
        })
    }

    pub fn tau(&self) -> f64 {
        self.r_m * self.c_m
    }

    pub fn validate(&self) -> Result<(), RelayError> {
        let bad = |m: &str| Err(RelayError::InvalidParams(m.to_string()));
        let all = [
            self.alpha,
            self.beta,
            self.gamma,
            self.k,
            self.c_m,
            self.r_m,
            self.v0,
            self.eta,
            self.lambda,
            self.d_min,
            self.dt,
            self.input_gain,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite");
        }
        if !(self.c_m > 0.0 && self.r_m > 0.0 && self.v0 > 0.0 && self.dt > 0.0) {
            return bad("c_m, r_m, v0 and dt must be positive");
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return bad("disturbance weights must be non-negative");
        }
        if !(self.k > 0.0) {
            return bad("k must be positive");
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1)");
        }
        if self.eta < 0.0 || self.d_min < 0.0 || self.input_gain < 0.0 {
            return bad("eta, d_min and input_gain must be non-negative");
        }
        if self.tau() / self.dt < 10.0 {
            return bad("tau = r_m * c_m must be at least 10 dt");
        }
        Ok(())
    }
}

/// How the spike train and the disturbance index feed the membrane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MembraneDrive {
    /// `gain · S(t) · D(t)`
    #[default]
    Gated,
    /// `gain · D(t)`
    Continuous,
    /// `gain · S(t)`
    Indicator,
}

impl MembraneDrive {
    pub fn input(self, gain: f64, spike: bool, d: f64) -> f64 {
        let s = if spike { 1.0 } else { 0.0 };
        match self {
            MembraneDrive::Gated => gain * s * d,
            MembraneDrive::Continuous => gain * d,
            MembraneDrive::Indicator => gain * s,
        }
    }
}

/// `On`: one output spike per episode. `Off`: keep firing, resetting after each spike.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatchMode {
    #[default]
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepMode {
    pub drive: MembraneDrive,
    pub latch: LatchMode,
}

/// Inverse-time input-spike generator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpikeEncoder {
    /// Input spikes emitted so far.
    pub n: u64,
    pub last_input_spike_t: Option<f64>,
    last_t: Option<f64>,
}

impl SpikeEncoder {
    /// Forgets the last spike time so the next supra-floor sample spikes at once.
    pub fn reset(&mut self) {
        self.n = 0;
        self.last_input_spike_t = None;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NeuronState {
    pub v_m: f64,
    pub v_th: f64,
    pub baseline: Baseline,
    pub encoder: SpikeEncoder,
    pub fired: bool,
    /// Output spikes emitted so far.
    pub n_output: u64,
}

impl NeuronState {
    pub fn new(baseline: Baseline, params: &NeuronParams) -> Self {
        Self {
            v_th: params.v0,
            baseline,
            ..Self::default()
        }
    }

    /// Episode boundary: clears the membrane, the latch and the encoder.
    pub fn reset_episode(&mut self) {
        self.v_m = 0.0;
        self.fired = false;
        self.encoder.reset();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Deviations {
    pub dv: f64,
    pub di: f64,
    pub dp: f64,
}

impl Deviations {
    pub fn total(&self) -> f64 {
        self.dv + self.di + self.dp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NeuronOutput {
    pub input_spike: bool,
    pub output_spike: bool,
    pub v_m: f64,
    pub v_th: f64,
    pub d: f64,
}

pub fn deviations(meas: &Measurement, base: &Baseline) -> Deviations {
    Deviations {
        dv: (meas.v_rms - base.v0).abs(),
        di: (meas.i_rms - base.i0).abs(),
        dp: (meas.p - base.p0).abs(),
    }
}

/// Weighted disturbance with values below the noise floor zeroed.
pub fn disturbance_index(dev: &Deviations, params: &NeuronParams) -> f64 {
    let d = params.alpha * dev.dv + params.beta * dev.di + params.gamma * dev.dp;
    if d < params.d_min {
        0.0
    } else {
        d
    }
}

/// Inter-spike interval in seconds.
pub fn spike_interval(d: f64, k: f64) -> f64 {
    1.0 / (1.0 + k * d)
}

/// Emits an input spike once the interval for the current disturbance has
/// elapsed since the previous spike. The first supra-floor sample spikes
/// immediately.
pub fn encode_input_spike(enc: &mut SpikeEncoder, d: f64, t: f64, params: &NeuronParams) -> Result<bool, RelayError> {
    if let Some(last) = enc.last_t {
        if t < last {
            return Err(RelayError::MonotonicTimeViolation { t, last });
        }
    }
    enc.last_t = Some(t);
    if !(d > 0.0) {
        return Ok(false);
    }
    let due = match enc.last_input_spike_t {
        None => true,
        Some(last) => t - last >= spike_interval(d, params.k),
    };
    if due {
        enc.n += 1;
        enc.last_input_spike_t = Some(t);
    }
    Ok(due)
}

pub fn adaptive_threshold(dev: &Deviations, v_m: f64, params: &NeuronParams) -> f64 {
    params.v0 * (-params.eta * dev.total()).exp() + params.lambda * v_m
}

/// One forward-Euler step of `C_m dv/dt = −v/R_m + input`, floored at zero.
pub fn integrate_membrane(v_m: f64, d_input: f64, params: &NeuronParams) -> f64 {
    let next = v_m + params.dt * (-v_m / params.r_m + d_input) / params.c_m;
    next.max(0.0)
}

/// Threshold, integration and firing for one step with an already computed
/// membrane input.
pub fn advance_membrane(
    state: &mut NeuronState,
    dev: &Deviations,
    d: f64,
    input_spike: bool,
    drive: f64,
    params: &NeuronParams,
    latch: LatchMode,
) -> NeuronOutput {
    let v_th = adaptive_threshold(dev, state.v_m, params);
    let mut v_m = integrate_membrane(state.v_m, drive, params);
    let armed = latch == LatchMode::Off || !state.fired;
    let output_spike = armed && v_m >= v_th;
    if output_spike {
        v_m = 0.0;
        state.fired = true;
        state.n_output += 1;
    }
    state.v_m = v_m;
    state.v_th = v_th;
    NeuronOutput {
        input_spike,
        output_spike,
        v_m,
        v_th,
        d,
    }
}

/// Deviations, disturbance index, input encoding, threshold and membrane
/// update for one neuron sample.
pub fn step_neuron(
    state: &mut NeuronState,
    meas: &Measurement,
    t: f64,
    params: &NeuronParams,
    mode: StepMode,
) -> Result<NeuronOutput, RelayError> {
    let dev = deviations(meas, &state.baseline);
    let d = disturbance_index(&dev, params);
    let spike = encode_input_spike(&mut state.encoder, d, t, params)?;
    let drive = mode.drive.input(params.input_gain, spike, d);
    Ok(advance_membrane(state, &dev, d, spike, drive, params, mode.latch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn meas(v: f64, i: f64, p: f64) -> Measurement {
        Measurement { t: 0.0, v_rms: v, i_rms: i, p }
    }

    fn base() -> Baseline {
        Baseline { v0: 230.0, i0: 15.0, p0: 9000.0 }
    }

    #[test]
    fn deviation_examples() {
        assert_eq!(deviations(&meas(230.0, 15.0, 9000.0), &base()), Deviations::default());
        assert_eq!(deviations(&meas(220.0, 15.0, 9000.0), &base()).dv, 10.0);
        assert_eq!(deviations(&meas(230.0, 15.0, 5000.0), &base()).dp, 4000.0);
    }

    #[test]
    fn disturbance_index_examples() {
        let p = NeuronParams { d_min: 1.0, ..NeuronParams::default() };
        let dev = Deviations { dv: 10.0, di: 4.0, dp: 200.0 };
        assert_relative_eq!(disturbance_index(&dev, &p), 13.0, max_relative = 1e-15);
        assert_eq!(disturbance_index(&Deviations::default(), &p), 0.0);
        let floor = NeuronParams { d_min: 13.0 / 0.4, ..p };
        assert_eq!(disturbance_index(&dev, &floor), 0.0);
    }

    #[test]
    fn spike_interval_examples() {
        assert_eq!(spike_interval(0.0, 20.0), 1.0);
        assert_relative_eq!(spike_interval(100.0, 20.0), 0.499_750_124_9e-3, max_relative = 1e-9);
        assert!(spike_interval(100.0, 20.0) <= 0.5e-3);
        assert_relative_eq!(spike_interval(10.0, 20.0), 4.975_124_378e-3, max_relative = 1e-9);
    }

    #[test]
    fn adaptive_threshold_examples() {
        let p = NeuronParams::default();
        assert_eq!(adaptive_threshold(&Deviations::default(), 0.0, &p), 17.9);
        let dev = Deviations { dv: 60.0, di: 30.0, dp: 10.0 };
        let expect = 17.9 * (-0.8f64).exp() + 3.0;
        assert_relative_eq!(adaptive_threshold(&dev, 5.0, &p), expect, max_relative = 1e-15);
        assert!((expect - 11.04).abs() < 0.01);
        let huge = Deviations { dv: 1e9, di: 0.0, dp: 0.0 };
        assert_eq!(adaptive_threshold(&huge, 5.0, &p), 3.0);
    }

    #[test]
    fn membrane_decays_with_tau() {
        let p = NeuronParams::default();
        let steps = (p.tau() / p.dt).round() as usize;
        let mut v = 10.0;
        for _ in 0..steps {
            v = integrate_membrane(v, 0.0, &p);
        }
        // One time constant of Euler decay: (1 − dt/τ)^(τ/dt) ≈ e^−1.
        assert!((v - 10.0 * (-1.0f64).exp()).abs() < 0.1);
    }

    #[test]
    fn constant_drive_crosses_threshold_at_closed_form_time() {
        let p = NeuronParams::membrane_set(2).unwrap();
        let (d, v_th) = (50.0, 17.9);
        let t_star = -p.tau() * (1.0 - v_th / (p.r_m * d)).ln();
        assert!((t_star - 130.7e-6).abs() < 0.1e-6);
        let mut v = 0.0;
        let mut step = 0usize;
        while v < v_th {
            v = integrate_membrane(v, d, &p);
            step += 1;
        }
        assert!((step as f64 * p.dt - t_star).abs() <= p.dt);
    }

    #[test]
    fn encoder_silent_at_rest_and_rejects_time_regression() {
        let p = NeuronParams::default();
        let mut e = SpikeEncoder::default();
        for s in 0..1000 {
            assert!(!encode_input_spike(&mut e, 0.0, s as f64 * p.dt, &p).unwrap());
        }
        assert_eq!(e.n, 0);
        assert!(matches!(
            encode_input_spike(&mut e, 0.0, 0.0, &p),
            Err(RelayError::MonotonicTimeViolation { .. })
        ));
    }

    #[test]
    fn constant_disturbance_spike_count() {
        let p = NeuronParams { d_min: 0.0, ..NeuronParams::default() };
        let mut e = SpikeEncoder::default();
        let steps = (1.0 / p.dt).round() as u64;
        let mut times = Vec::new();
        for s in 0..steps {
            let t = s as f64 * p.dt;
            if encode_input_spike(&mut e, 100.0, t, &p).unwrap() {
                times.push(t);
            }
        }
        // Oracle: the interval is quantised up to whole steps of dt.
        let per = (spike_interval(100.0, 20.0) / p.dt).ceil();
        let expect = (steps as f64 / per).ceil() as u64;
        assert_eq!(e.n, expect);
        assert!((1990..=2010).contains(&e.n));
        for w in times.windows(2) {
            assert!((w[1] - w[0] - 0.5e-3).abs() < p.dt);
        }
    }

    #[test]
    fn step_disturbance_spikes_within_one_interval() {
        let p = NeuronParams { d_min: 0.0, ..NeuronParams::default() };
        let mut e = SpikeEncoder::default();
        let onset = 1.5;
        let start = ((onset - 0.01) / p.dt).round() as u64;
        let mut first = None;
        for s in start..start + 10_000 {
            let t = s as f64 * p.dt;
            let d = if t >= onset { 100.0 } else { 0.0 };
            if encode_input_spike(&mut e, d, t, &p).unwrap() && first.is_none() {
                first = Some(t);
            }
        }
        let first = first.unwrap();
        assert!(first >= onset && first - onset <= spike_interval(100.0, 20.0));
    }

    #[test]
    fn quiescent_neuron_stays_at_rest() {
        let p = NeuronParams::default();
        let mut s = NeuronState::new(base(), &p);
        for k in 0..2000 {
            let out = step_neuron(&mut s, &meas(230.0, 15.0, 9000.0), k as f64 * p.dt, &p, StepMode::default()).unwrap();
            assert!(!out.input_spike && !out.output_spike);
            assert_eq!(out.v_m, 0.0);
        }
    }

    fn first_output(dv: f64, p: &NeuronParams) -> Option<usize> {
        let mut s = NeuronState::new(base(), p);
        let m = meas(230.0 - dv, 15.0 + dv / 10.0, 9000.0);
        let mode = StepMode { drive: MembraneDrive::Continuous, latch: LatchMode::On };
        (0..20_000).find(|&k| step_neuron(&mut s, &m, k as f64 * p.dt, p, mode).unwrap().output_spike)
    }

    #[test]
    fn stronger_disturbance_fires_earlier() {
        let p = NeuronParams { d_min: 1.0, input_gain: 1.0, ..NeuronParams::default() };
        let severe = first_output(120.0, &p).unwrap();
        let mild = first_output(60.0, &p).unwrap();
        assert!(severe < mild);
    }

    #[test]
    fn output_spike_resets_and_latches() {
        let p = NeuronParams { d_min: 1.0, ..NeuronParams::default() };
        let mut s = NeuronState::new(base(), &p);
        let m = meas(150.0, 30.0, 2000.0);
        let mode = StepMode { drive: MembraneDrive::Continuous, latch: LatchMode::On };
        let mut outputs = 0;
        for k in 0..50_000 {
            let out = step_neuron(&mut s, &m, k as f64 * p.dt, &p, mode).unwrap();
            if out.output_spike {
                outputs += 1;
                assert_eq!(out.v_m, 0.0);
                assert!(s.fired);
            }
        }
        assert_eq!(outputs, 1);

        let mut free = NeuronState::new(base(), &p);
        let off = StepMode { latch: LatchMode::Off, ..mode };
        let n = (0..50_000)
            .filter(|&k| step_neuron(&mut free, &m, k as f64 * p.dt, &p, off).unwrap().output_spike)
            .count();
        assert!(n > 1);
    }

    #[test]
    fn parameter_validation() {
        assert!(NeuronParams::default().validate().is_ok());
        for n in 1..=3 {
            NeuronParams::membrane_set(n).unwrap().validate().unwrap();
        }
        assert!(NeuronParams::membrane_set(4).is_none());
        let coarse = NeuronParams { dt: 20e-6, ..NeuronParams::default() };
        assert!(coarse.validate().is_err());
        let lambda = NeuronParams { lambda: 1.0, ..NeuronParams::default() };
        assert!(lambda.validate().is_err());
    }

    #[test]
    fn membrane_set_time_constants() {
        let taus: Vec<f64> = (1..=3).map(|n| NeuronParams::membrane_set(n).unwrap().tau()).collect();
        assert_relative_eq!(taus[0], 86.4e-6, max_relative = 1e-12);
        assert_relative_eq!(taus[1], 161e-6, max_relative = 1e-12);
        assert_relative_eq!(taus[2], 47e-6, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn sensitivity_matches_finite_difference(d in 0.0f64..200.0, k in 1.0f64..100.0) {
            let h = 1e-6 * (1.0 + d);
            let fd = (spike_interval(d + h, k) - spike_interval((d - h).max(0.0), k)) / (d + h - (d - h).max(0.0));
            let analytic = -k / (1.0 + k * d).powi(2);
            prop_assert!((fd - analytic).abs() <= 1e-4 * analytic.abs());
        }

        #[test]
        fn threshold_positive_and_exact_at_rest(
            dv in 0.0f64..1e4, di in 0.0f64..1e4, dp in 0.0f64..1e6, v_m in 0.0f64..100.0, lambda in 0.0f64..0.99,
        ) {
            let p = NeuronParams { lambda, ..NeuronParams::default() };
            let dev = Deviations { dv, di, dp };
            prop_assert!(adaptive_threshold(&dev, v_m, &p) >= 0.0);
            let p0 = NeuronParams { lambda: 0.0, ..p };
            prop_assert_eq!(adaptive_threshold(&Deviations::default(), v_m, &p0), p0.v0);
        }

        #[test]
        fn silent_below_noise_floor(ds in prop::collection::vec(0.0f64..DEFAULT_D_MIN * 0.9999, 1..500)) {
            let p = NeuronParams::default();
            let mut s = NeuronState::new(Baseline::default(), &p);
            for (k, dv) in ds.iter().enumerate() {
                let m = meas(*dv, 0.0, 0.0);
                let out = step_neuron(&mut s, &m, k as f64 * p.dt, &p, StepMode::default()).unwrap();
                prop_assert!(!out.input_spike && !out.output_spike);
            }
        }

        #[test]
        fn inter_spike_gaps_within_bounds(ds in prop::collection::vec(1.0f64..500.0, 1..40)) {
            let p = NeuronParams { d_min: 0.0, ..NeuronParams::default() };
            let (lo, hi) = ds.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &d| (a.min(d), b.max(d)));
            let mut e = SpikeEncoder::default();
            let mut last = None;
            // Hold each level for 2000 steps.
            for (seg, &d) in ds.iter().enumerate() {
                for s in 0..2000u64 {
                    let t = (seg as u64 * 2000 + s) as f64 * p.dt;
                    if encode_input_spike(&mut e, d, t, &p).unwrap() {
                        if let Some(prev) = last {
                            let gap: f64 = t - prev;
                            prop_assert!(gap >= spike_interval(hi, p.k) - 1e-12);
                            prop_assert!(gap <= spike_interval(lo, p.k) + p.dt + 1e-12);
                        }
                        last = Some(t);
                    }
                }
            }
        }

        #[test]
        fn larger_disturbance_never_fires_later(dv in 35.0f64..200.0, extra in 0.0f64..100.0) {
            let p = NeuronParams::default();
            let a = first_output(dv + extra, &p);
            let b = first_output(dv, &p);
            match (a, b) {
                (Some(x), Some(y)) => prop_assert!(x <= y),
                (None, Some(_)) => prop_assert!(false, "stronger run never fired"),
                _ => {}
            }
        }

        #[test]
        fn euler_iterates_match_discrete_closed_form(which in 1usize..=3, d in 1.0f64..200.0) {
            // Oracle: forward Euler on C dv/dt = −v/R + D from rest gives
            // v_n = R·D·(1 − (1 − dt/τ)^n).
            let p = NeuronParams::membrane_set(which).unwrap();
            let h = p.dt / p.tau();
            let steps = (10.0 / h).ceil() as i32;
            let mut v = 0.0;
            let mut worst: f64 = 0.0;
            for n in 1..=steps {
                v = integrate_membrane(v, d, &p);
                let discrete = p.r_m * d * (1.0 - (1.0 - h).powi(n));
                prop_assert!((v - discrete).abs() <= 1e-9 * p.r_m * d);
                let exact = p.r_m * d * (1.0 - (-(n as f64) * h).exp());
                worst = worst.max((v - exact).abs() / (p.r_m * d));
            }
            // First-order global error peaks near one time constant at about h / (2e).
            prop_assert!(worst <= h / (2.0 * std::f64::consts::E) * 1.1);
        }
    }
}
