//! CSV and JSON emission.
//!
//! | file | columns |
//! |---|---|
//! | `spikes.csv` | `t_s, der_id, kind, line_id` (`line_id` empty for terminal channels) |
//! | `membrane.csv` | `t_s, der_id, v_m, v_th, D` |
//! | `breakers.csv` | `t_s, breaker_id, state` (`state` is `open` or `already_open`) |
//! | `electrical.csv` | `t_s, V_bus<n>…, I_line<n>…, I_der<n>…` (RMS magnitudes, numbered from 1) |
//! | `metrics.json` | aggregate report |
//! | `cases.json` | per-case results (batch runs only) |
//!
//! Every number is written with at most 12 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use super::batch::BatchResult;
use super::runner::TraceBundle;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

/// `%.12g` formatting.
pub fn fmt_g12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa.to_string()), exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64");
            if let Some(r) = fmt_g12(x).parse::<f64>().ok().and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to 12 significant digits.
pub fn to_rounded_json<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("serializable");
    round_value(&mut v);
    let mut s = serde_json::to_string_pretty(&v).expect("serializable");
    s.push('\n');
    s
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn spikes_csv(bundle: &TraceBundle) -> String {
    let mut s = String::from("t_s,der_id,kind,line_id\n");
    for e in &bundle.spike_log {
        let line = e.line_id.map(|l| l.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{}", fmt_g12(e.t), e.der_id, e.kind.as_str(), line);
    }
    s
}

pub fn membrane_csv(bundle: &TraceBundle) -> String {
    let mut s = String::from("t_s,der_id,v_m,v_th,D\n");
    for m in &bundle.membrane_trace {
        let _ = writeln!(s, "{},{},{},{},{}", fmt_g12(m.t), m.der_id, fmt_g12(m.v_m), fmt_g12(m.v_th), fmt_g12(m.d));
    }
    s
}

pub fn breakers_csv(bundle: &TraceBundle) -> String {
    let mut s = String::from("t_s,breaker_id,state\n");
    for b in &bundle.breaker_log {
        let _ = writeln!(s, "{},{},{}", fmt_g12(b.t), b.label, b.action.as_str());
    }
    s
}

pub fn electrical_csv(bundle: &TraceBundle) -> String {
    let mut s = String::from("t_s");
    if let Some(first) = bundle.electrical_trace.first() {
        for (prefix, n) in [
            ("V_bus", first.bus_voltages.len()),
            ("I_line", first.line_currents.len()),
            ("I_der", first.der_currents.len()),
        ] {
            for i in 1..=n {
                let _ = write!(s, ",{prefix}{i}");
            }
        }
    }
    s.push('\n');
    for e in &bundle.electrical_trace {
        s.push_str(&fmt_g12(e.t));
        for x in e.bus_voltages.iter().chain(&e.line_currents).chain(&e.der_currents) {
            s.push(',');
            s.push_str(&fmt_g12(*x));
        }
        s.push('\n');
    }
    s
}

/// Writes the four trace CSVs and a single-case `metrics.json`.
pub fn emit_outputs(bundle: &TraceBundle, out_dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    let window = crate::metrics::DEFAULT_ACCURACY_WINDOW_MS;
    let report = MetricsReport::from_cases(std::slice::from_ref(&bundle.case_result), window)?;
    Ok(vec![
        write(out_dir, "spikes.csv", &spikes_csv(bundle))?,
        write(out_dir, "membrane.csv", &membrane_csv(bundle))?,
        write(out_dir, "breakers.csv", &breakers_csv(bundle))?,
        write(out_dir, "electrical.csv", &electrical_csv(bundle))?,
        write(out_dir, "metrics.json", &to_rounded_json(&report))?,
        write(out_dir, "case.json", &to_rounded_json(&bundle.case_result))?,
    ])
}

/// Writes `metrics.json` and `cases.json` for a batch.
pub fn emit_batch(result: &BatchResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    Ok(vec![
        write(out_dir, "metrics.json", &to_rounded_json(&result.report))?,
        write(out_dir, "cases.json", &to_rounded_json(&result.cases))?,
    ])
}
