use serde::{Deserialize, Serialize};

use crate::error::MetricsError;

/// IEC standard-inverse constants.
pub const IEC_SI_K: f64 = 0.14;
pub const IEC_SI_N: f64 = 0.02;

/// Inverse-time overcurrent trip time `tms·K / (Mⁿ − 1)` for a current
/// multiple `M` of pickup.
pub fn idmt_trip_time(multiple: f64, k: f64, n: f64, tms: f64) -> Result<f64, MetricsError> {
    if !(multiple > 1.0) {
        return Err(MetricsError::BelowPickup(multiple));
    }
    Ok(tms * k / (multiple.powf(n) - 1.0))
}

/// Slope of the input-spike interval with respect to the disturbance index.
pub fn sensitivity_dtdd(d: f64, k: f64) -> f64 {
    -k / (1.0 + k * d).powi(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    /// Fault conductance in siemens for resistance sweeps, fault-type rank for
    /// type sweeps, or current multiple for IDMT curves.
    pub severity: f64,
    pub trip_time_ms: Option<f64>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TripCurve {
    pub rows: Vec<CurveRow>,
}

impl TripCurve {
    /// Rows sorted by severity.
    pub fn sorted(mut self) -> Self {
        self.rows.sort_by(|a, b| a.severity.total_cmp(&b.severity));
        self
    }

    pub fn has_missed(&self) -> bool {
        self.rows.iter().any(|r| r.trip_time_ms.is_none())
    }

    fn times_by_severity(&self) -> Option<Vec<f64>> {
        let mut rows: Vec<&CurveRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| a.severity.total_cmp(&b.severity));
        rows.iter().map(|r| r.trip_time_ms).collect()
    }

    /// Trip time never rises as severity rises. A missed row breaks monotonicity.
    pub fn is_non_increasing(&self) -> bool {
        self.times_by_severity()
            .is_some_and(|t| t.windows(2).all(|w| w[1] <= w[0]))
    }

    pub fn is_strictly_decreasing(&self) -> bool {
        self.times_by_severity()
            .is_some_and(|t| t.windows(2).all(|w| w[1] < w[0]))
    }
}

/// Samples the IDMT characteristic at the given current multiples.
pub fn idmt_curve(multiples: &[f64], k: f64, n: f64, tms: f64) -> Result<TripCurve, MetricsError> {
    let rows = multiples
        .iter()
        .map(|&m| {
            Ok(CurveRow {
                severity: m,
                trip_time_ms: Some(1e3 * idmt_trip_time(m, k, n, tms)?),
                label: format!("M={m}"),
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(TripCurve { rows })
}
