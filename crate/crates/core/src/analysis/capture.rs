use std::path::Path;

use serde::Deserialize;

use super::{file_err, AnalysisError};

/// Feed-gas mole fractions of the two-component run.
pub const F_CO2: f64 = 0.15;
pub const F_N2: f64 = 0.85;

pub const ISOTHERM_COLUMNS: [&str; 5] = ["id", "q_co2_16bar", "q_co2_0p15bar", "q_co2_mix", "q_n2_mix"];

/// Uptakes in mol/kg for one material.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct IsothermRow {
    pub id: String,
    /// Single-component CO2 at 16 bar.
    pub q_co2_16bar: f64,
    /// Single-component CO2 at 0.15 bar.
    pub q_co2_0p15bar: f64,
    /// CO2 from the 15/85 CO2/N2 mixture at 0.15 bar.
    pub q_co2_mix: f64,
    /// N2 from the same mixture.
    pub q_n2_mix: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkingCapacity {
    pub value: f64,
    /// Negative capacity: physically suspect input.
    pub suspect: bool,
}

pub fn working_capacity(q_high: f64, q_low: f64) -> WorkingCapacity {
    let value = q_high - q_low;
    if value < 0.0 {
        log::warn!("negative working capacity {value} (Q_high {q_high} < Q_low {q_low})");
    }
    WorkingCapacity {
        value,
        suspect: value < 0.0,
    }
}

/// `(Q_CO2 / Q_N2) / (f_CO2 / f_N2)`; `None` when `Q_N2` is zero.
pub fn selectivity(q_co2: f64, q_n2: f64) -> Option<f64> {
    (q_n2 != 0.0).then(|| (q_co2 / q_n2) * (F_N2 / F_CO2))
}

/// Percentage of `reference` strictly below `value`; `None` for an empty reference.
pub fn percentile_rank(value: f64, reference: &[f64]) -> Option<f64> {
    if reference.is_empty() {
        return None;
    }
    let below = reference.iter().filter(|&&r| r < value).count();
    Some(100.0 * below as f64 / reference.len() as f64)
}

/// Reads isotherm rows; uptakes must be finite and non-negative.
pub fn read_isotherms(path: &Path) -> Result<Vec<IsothermRow>, AnalysisError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| file_err(path, e))?;
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<IsothermRow>().enumerate() {
        let row = row.map_err(|e| file_err(path, format!("row {}: {e}", i + 2)))?;
        let q = [row.q_co2_16bar, row.q_co2_0p15bar, row.q_co2_mix, row.q_n2_mix];
        if q.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(file_err(path, format!("row {}: uptakes must be finite and >= 0", i + 2)));
        }
        out.push(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureRow {
    pub id: String,
    pub working_capacity: WorkingCapacity,
    pub selectivity: Option<f64>,
    pub wc_percentile: Option<f64>,
}

/// Capture metrics per row, with working-capacity percentiles against
/// `reference` when given.
pub fn capture_metrics(rows: &[IsothermRow], reference: Option<&[f64]>) -> Vec<CaptureRow> {
    rows.iter()
        .map(|r| {
            let wc = working_capacity(r.q_co2_16bar, r.q_co2_0p15bar);
            CaptureRow {
                id: r.id.clone(),
                working_capacity: wc,
                selectivity: selectivity(r.q_co2_mix, r.q_n2_mix),
                wc_percentile: reference.and_then(|refs| percentile_rank(wc.value, refs)),
            }
        })
        .collect()
}

pub fn write_capture_csv(path: &Path, rows: &[CaptureRow]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| file_err(path, e))?;
    w.write_record(["id", "working_capacity", "suspect", "selectivity", "wc_percentile"])
        .map_err(|e| file_err(path, e))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.id.clone(),
            r.working_capacity.value.to_string(),
            r.working_capacity.suspect.to_string(),
            opt(r.selectivity),
            opt(r.wc_percentile),
        ])
        .map_err(|e| file_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}
