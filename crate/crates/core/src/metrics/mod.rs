//! Protection metrics and the inverse-time comparator.

mod idmt;

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::grid::FaultSpec;

pub use idmt::{idmt_curve, idmt_trip_time, sensitivity_dtdd, CurveRow, TripCurve, IEC_SI_K, IEC_SI_N};

/// Relative current deviation that marks fault onset.
pub const ONSET_THRESHOLD: f64 = 0.05;

pub const DEFAULT_ACCURACY_WINDOW_MS: f64 = 40.0;

/// What was applied in a case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseEvent {
    Fault(FaultSpec),
    LoadStep { buses: Vec<usize>, fraction: f64 },
    /// Anything else: multiple faults, grid sags, or no event.
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpikeCount {
    pub input: u64,
    pub output: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub scenario_id: String,
    pub event: CaseEvent,
    pub t_onset: Option<f64>,
    /// Earliest output spike of the first protection episode.
    pub t_first_spike: Option<f64>,
    pub winner_der: Option<usize>,
    /// DERs at minimal electrical distance from the fault (empty for non-fault cases).
    pub nearest_ders: Vec<usize>,
    pub tripped_line: Option<usize>,
    pub spike_counts: Vec<SpikeCount>,
    /// Breakers actually opened during the run.
    pub breaker_operations: usize,
    /// Lines with at least one breaker opened during the run, ascending.
    #[serde(default)]
    pub opened_lines: Vec<usize>,
    /// Set when the case could not be simulated.
    pub error: Option<String>,
}

impl CaseResult {
    pub fn fault(&self) -> Option<&FaultSpec> {
        match &self.event {
            CaseEvent::Fault(f) => Some(f),
            _ => None,
        }
    }

    pub fn is_load_case(&self) -> bool {
        matches!(self.event, CaseEvent::LoadStep { .. })
    }

    pub fn unique_nearest(&self) -> Option<usize> {
        match self.nearest_ders.as_slice() {
            [only] => Some(*only),
            _ => None,
        }
    }

    pub fn latency_ms(&self) -> Result<f64, MetricsError> {
        let onset = self.t_onset.ok_or(MetricsError::MissedDetection)?;
        tripping_latency(self.t_first_spike, onset)
    }

    pub fn total_input_spikes(&self) -> u64 {
        self.spike_counts.iter().map(|c| c.input).sum()
    }

    pub fn total_output_spikes(&self) -> u64 {
        self.spike_counts.iter().map(|c| c.output).sum()
    }

    /// Correct isolation for fault cases, correct non-operation otherwise.
    pub fn is_correct(&self, window_ms: f64) -> bool {
        if self.error.is_some() {
            return false;
        }
        match &self.event {
            CaseEvent::Fault(f) => {
                let nearest = self.winner_der.is_some_and(|w| self.nearest_ders.contains(&w));
                let in_time = self.latency_ms().is_ok_and(|l| l <= window_ms);
                nearest && in_time && self.tripped_line == Some(f.line)
            }
            _ => self.t_first_spike.is_none() && self.breaker_operations == 0,
        }
    }
}

/// First sample whose current deviates from `i0` by more than 5 %.
pub fn detect_fault_onset(trace: &[(f64, f64)], i0: f64) -> Option<f64> {
    trace
        .iter()
        .find(|&&(_, i)| (i - i0).abs() > ONSET_THRESHOLD * i0)
        .map(|&(t, _)| t)
}

/// Latency in milliseconds.
pub fn tripping_latency(t_first_spike: Option<f64>, t_onset: f64) -> Result<f64, MetricsError> {
    let spike = t_first_spike.ok_or(MetricsError::MissedDetection)?;
    if spike < t_onset {
        return Err(MetricsError::SpikeBeforeOnset { spike, onset: t_onset });
    }
    Ok((spike - t_onset) * 1e3)
}

/// Percentage of cases handled correctly within `window_ms`.
pub fn detection_accuracy(cases: &[CaseResult], window_ms: f64) -> Result<f64, MetricsError> {
    if cases.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let correct = cases.iter().filter(|c| c.is_correct(window_ms)).count();
    Ok(100.0 * correct as f64 / cases.len() as f64)
}

/// Average spikes per DER.
pub fn spike_economy(total_spikes: u64, n_ders: usize) -> f64 {
    assert!(n_ders >= 1, "spike economy needs at least one DER");
    total_spikes as f64 / n_ders as f64
}

/// Percentage of fault cases with a unique nearest DER in which that DER won
/// arbitration; `None` when no case qualifies. Missed detections count as misses.
pub fn spatial_selectivity(cases: &[CaseResult]) -> Option<f64> {
    let eligible: Vec<&CaseResult> = cases
        .iter()
        .filter(|c| c.fault().is_some() && c.unique_nearest().is_some())
        .collect();
    if eligible.is_empty() {
        return None;
    }
    let hits = eligible.iter().filter(|c| c.winner_der == c.unique_nearest()).count();
    Some(100.0 * hits as f64 / eligible.len() as f64)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseLatency {
    pub scenario_id: String,
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_cases: usize,
    pub n_fault_cases: usize,
    pub n_load_cases: usize,
    pub n_failed_cases: usize,
    pub latency_ms: Vec<CaseLatency>,
    pub mean_latency_ms: Option<f64>,
    pub median_latency_ms: Option<f64>,
    pub accuracy_window_ms: f64,
    pub accuracy_pct: f64,
    pub accuracy_pct_40ms: f64,
    pub accuracy_pct_60ms: f64,
    pub selectivity_pct: Option<f64>,
    /// Mean over cases of input spikes per DER.
    pub spike_economy: f64,
    /// Mean over cases of output spikes per DER.
    pub output_spike_economy: f64,
    /// Load cases that produced an output spike or opened a breaker.
    pub false_trip_count: usize,
    pub missed_detection_count: usize,
    pub idmt_curves: IdmtCurves,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdmtCurves {
    /// IEC standard-inverse trip time against current multiple.
    pub idmt: TripCurve,
    /// Median simulated latency against fault conductance.
    pub neuromorphic: TripCurve,
}

const IDMT_SAMPLE_MULTIPLES: [f64; 8] = [1.1, 1.5, 2.0, 3.0, 5.0, 10.0, 20.0, 50.0];

impl MetricsReport {
    pub fn from_cases(cases: &[CaseResult], window_ms: f64) -> Result<Self, MetricsError> {
        if cases.is_empty() {
            return Err(MetricsError::EmptyBatch);
        }
        let faults: Vec<&CaseResult> = cases.iter().filter(|c| c.fault().is_some()).collect();
        let latencies: Vec<CaseLatency> = faults
            .iter()
            .map(|c| CaseLatency {
                scenario_id: c.scenario_id.clone(),
                latency_ms: c.latency_ms().ok(),
            })
            .collect();
        let found: Vec<f64> = latencies.iter().filter_map(|l| l.latency_ms).collect();
        let n = cases.len() as f64;
        let per_der = |f: fn(&CaseResult) -> u64| {
            cases
                .iter()
                .filter(|c| !c.spike_counts.is_empty())
                .map(|c| spike_economy(f(c), c.spike_counts.len()))
                .sum::<f64>()
                / n
        };

        // Median latency per fault resistance, as latency against conductance.
        let mut by_r: Vec<(f64, Vec<f64>)> = Vec::new();
        for c in &faults {
            let r = c.fault().map(|f| f.resistance).unwrap_or_default();
            let entry = match by_r.iter_mut().position(|(x, _)| *x == r) {
                Some(i) => &mut by_r[i].1,
                None => {
                    by_r.push((r, Vec::new()));
                    &mut by_r.last_mut().unwrap().1
                }
            };
            if let Ok(l) = c.latency_ms() {
                entry.push(l);
            }
        }
        let neuromorphic = TripCurve {
            rows: by_r
                .into_iter()
                .map(|(r, ls)| CurveRow {
                    severity: 1.0 / r,
                    trip_time_ms: median(&ls),
                    label: format!("R={r}"),
                })
                .collect(),
        }
        .sorted();

        Ok(Self {
            n_cases: cases.len(),
            n_fault_cases: faults.len(),
            n_load_cases: cases.iter().filter(|c| c.is_load_case()).count(),
            n_failed_cases: cases.iter().filter(|c| c.error.is_some()).count(),
            mean_latency_ms: (!found.is_empty()).then(|| found.iter().sum::<f64>() / found.len() as f64),
            median_latency_ms: median(&found),
            latency_ms: latencies,
            accuracy_window_ms: window_ms,
            accuracy_pct: detection_accuracy(cases, window_ms)?,
            accuracy_pct_40ms: detection_accuracy(cases, 40.0)?,
            accuracy_pct_60ms: detection_accuracy(cases, 60.0)?,
            selectivity_pct: spatial_selectivity(cases),
            spike_economy: per_der(CaseResult::total_input_spikes),
            output_spike_economy: per_der(CaseResult::total_output_spikes),
            false_trip_count: cases
                .iter()
                .filter(|c| c.is_load_case() && (c.t_first_spike.is_some() || c.breaker_operations > 0))
                .count(),
            missed_detection_count: faults.iter().filter(|c| c.t_first_spike.is_none()).count(),
            idmt_curves: IdmtCurves {
                idmt: idmt_curve(&IDMT_SAMPLE_MULTIPLES, IEC_SI_K, IEC_SI_N, 1.0)?,
                neuromorphic,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::FaultType;
    use proptest::prelude::*;

    fn fault_case(id: usize, winner: Option<usize>, nearest: Vec<usize>, latency_ms: Option<f64>, line: Option<usize>) -> CaseResult {
        CaseResult {
            scenario_id: format!("case-{id}"),
            event: CaseEvent::Fault(FaultSpec {
                line: 0,
                position: 0.5,
                fault_type: FaultType::ABCG,
                resistance: 0.01,
                t_start: 0.1,
                t_end: 0.3,
            }),
            t_onset: Some(0.1),
            t_first_spike: latency_ms.map(|l| 0.1 + l * 1e-3),
            winner_der: winner,
            nearest_ders: nearest,
            tripped_line: line,
            spike_counts: vec![SpikeCount { input: 10, output: 1 }; 3],
            breaker_operations: 2,
            opened_lines: line.into_iter().collect(),
            error: None,
        }
    }

    fn load_case(id: usize, spiked: bool) -> CaseResult {
        CaseResult {
            scenario_id: format!("load-{id}"),
            event: CaseEvent::LoadStep { buses: vec![0], fraction: 0.2 },
            t_onset: None,
            t_first_spike: spiked.then_some(0.2),
            winner_der: None,
            nearest_ders: vec![],
            tripped_line: None,
            spike_counts: vec![SpikeCount::default(); 3],
            breaker_operations: 0,
            opened_lines: Vec::new(),
            error: None,
        }
    }

    #[test]
    fn onset_examples() {
        let trace: Vec<(f64, f64)> = (0..100)
            .map(|k| {
                let t = 1.45 + k as f64 * 0.001;
                (t, if t >= 1.5 - 1e-9 { 10.6 } else { 10.0 })
            })
            .collect();
        let onset = detect_fault_onset(&trace, 10.0).unwrap();
        assert!((onset - 1.5).abs() < 1e-9);
        let load: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, 10.3)).collect();
        assert_eq!(detect_fault_onset(&load, 10.0), None);
        assert_eq!(detect_fault_onset(&[(0.2, 10.0), (0.25, 40.0)], 10.0), Some(0.25));
    }

    #[test]
    fn latency_examples() {
        assert!((tripping_latency(Some(1.510), 1.500).unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(tripping_latency(Some(1.5), 1.5), Ok(0.0));
        assert_eq!(tripping_latency(None, 1.5), Err(MetricsError::MissedDetection));
        assert!(matches!(tripping_latency(Some(1.4), 1.5), Err(MetricsError::SpikeBeforeOnset { .. })));
    }

    #[test]
    fn accuracy_examples() {
        let mut cases: Vec<CaseResult> = (0..98).map(|i| fault_case(i, Some(0), vec![0], Some(10.0), Some(0))).collect();
        cases.push(fault_case(98, Some(2), vec![0], Some(10.0), Some(0)));
        cases.push(fault_case(99, None, vec![0], None, None));
        assert!((detection_accuracy(&cases, 40.0).unwrap() - 98.0).abs() < 1e-12);

        let loads: Vec<CaseResult> = (0..5).map(|i| load_case(i, false)).collect();
        assert_eq!(detection_accuracy(&loads, 40.0), Ok(100.0));
        let missed: Vec<CaseResult> = (0..4).map(|i| fault_case(i, None, vec![0], None, None)).collect();
        assert_eq!(detection_accuracy(&missed, 40.0), Ok(0.0));
        assert_eq!(detection_accuracy(&[], 40.0), Err(MetricsError::EmptyBatch));
    }

    #[test]
    fn accuracy_window_and_line_matter() {
        let late = fault_case(0, Some(0), vec![0], Some(50.0), Some(0));
        assert!(!late.is_correct(40.0));
        assert!(late.is_correct(60.0));
        let wrong_line = fault_case(1, Some(0), vec![0], Some(5.0), Some(2));
        assert!(!wrong_line.is_correct(40.0));
        let tie = fault_case(2, Some(1), vec![0, 1], Some(5.0), Some(0));
        assert!(tie.is_correct(40.0));
        assert!(!load_case(3, true).is_correct(40.0));
    }

    #[test]
    fn spike_economy_examples() {
        assert_eq!(spike_economy(831, 3), 277.0);
        assert_eq!(spike_economy(0, 3), 0.0);
        assert!((spike_economy(5, 3) - 1.667).abs() < 1e-3);
    }

    #[test]
    fn selectivity_examples() {
        let all: Vec<CaseResult> = (0..10).map(|i| fault_case(i, Some(1), vec![1], Some(5.0), Some(0))).collect();
        assert_eq!(spatial_selectivity(&all), Some(100.0));
        let mut mixed: Vec<CaseResult> = (0..195).map(|i| fault_case(i, Some(0), vec![0], Some(5.0), Some(0))).collect();
        mixed.extend((0..5).map(|i| fault_case(200 + i, Some(2), vec![0], Some(5.0), Some(0))));
        // Equidistant pairs are excluded from the denominator.
        mixed.extend((0..7).map(|i| fault_case(300 + i, Some(2), vec![0, 1], Some(5.0), Some(0))));
        assert!((spatial_selectivity(&mixed).unwrap() - 97.5).abs() < 1e-12);
        assert_eq!(spatial_selectivity(&[load_case(0, false)]), None);
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        let rho = spearman(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap();
        assert!((rho + 1.0).abs() < 1e-15);
        // One tied pair among six strictly ordered values.
        let rho = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[6.0, 5.0, 4.0, 3.0, 1.0, 1.0]).unwrap();
        assert!((rho + 0.985_611_5).abs() < 1e-6, "{rho}");
        assert_eq!(spearman(&[1.0], &[1.0]), None);
    }

    #[test]
    fn report_aggregates_both_windows() {
        let mut cases = vec![
            fault_case(0, Some(0), vec![0], Some(10.0), Some(0)),
            fault_case(1, Some(0), vec![0], Some(50.0), Some(0)),
        ];
        cases.push(load_case(2, false));
        cases.push(load_case(3, true));
        let r = MetricsReport::from_cases(&cases, 40.0).unwrap();
        assert_eq!(r.accuracy_pct_40ms, 50.0);
        assert_eq!(r.accuracy_pct_60ms, 75.0);
        assert_eq!(r.false_trip_count, 1);
        assert!((r.median_latency_ms.unwrap() - 30.0).abs() < 1e-9);
        assert!(r.idmt_curves.idmt.is_strictly_decreasing());
        assert_eq!(r.idmt_curves.neuromorphic.rows.len(), 1);
    }

    proptest! {
        #[test]
        fn metrics_bounded_and_permutation_invariant(
            spec in prop::collection::vec((0usize..3, 0usize..3, prop::option::of(0.0f64..80.0), any::<bool>()), 1..40),
            seed in any::<u64>(),
        ) {
            let cases: Vec<CaseResult> = spec
                .iter()
                .enumerate()
                .map(|(i, &(w, n, l, is_load))| if is_load { load_case(i, l.is_some()) } else { fault_case(i, Some(w), vec![n], l, Some(0)) })
                .collect();
            let mut shuffled = cases.clone();
            // Deterministic permutation.
            let len = shuffled.len();
            for i in (1..len).rev() {
                let j = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) % (i as u64 + 1)) as usize;
                shuffled.swap(i, j);
            }
            let a = detection_accuracy(&cases, 40.0).unwrap();
            prop_assert!((0.0..=100.0).contains(&a));
            prop_assert_eq!(a, detection_accuracy(&shuffled, 40.0).unwrap());
            let s = spatial_selectivity(&cases);
            prop_assert_eq!(s, spatial_selectivity(&shuffled));
            if let Some(s) = s {
                prop_assert!((0.0..=100.0).contains(&s));
            }
            for c in &cases {
                // Exactly one of latency or missed detection.
                prop_assert!(c.latency_ms().is_ok() != c.t_first_spike.is_none() || c.t_onset.is_none());
            }
        }

        #[test]
        fn spike_economy_linear(total in 0u64..1_000_000, n in 1usize..20, scale in 1u64..5) {
            let a = spike_economy(total * scale, n);
            prop_assert!((a - scale as f64 * spike_economy(total, n)).abs() <= 1e-9 * a.max(1.0));
        }
    }
}
