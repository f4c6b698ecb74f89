//! Feature extraction: capacity-voltage interpolation, the ΔQ-based
//! early-life feature sets, and per-cycle / per-step descriptors for the
//! SOH and SOC tasks.
//!
//! All cycle indices here are 0-based positions in `cycle_data`, so the
//! default critical cycles `[2, 9, 99]` are the 3rd, 10th and 100th cycle.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::battery_data::{CellRecord, CycleRecord};
use crate::error::{Error, Result};
use crate::registry::{parse_params, Registry};
use crate::stats;

/// Floor applied before taking log10 of a variance (Ah²).
pub const VARIANCE_FLOOR: f64 = 1e-12;
/// Minimum voltage span a discharge segment must cover.
pub const MIN_VOLTAGE_SPAN: f64 = 1e-6;
/// Resolution of the previous-cycle capacity block in SOC features.
pub const SOC_PREV_DIMS: usize = 32;
/// Side-map key under which precalculated curves are stored in a cell file.
pub const QDLIN_CACHE_KEY: &str = "precalculated_qdlin";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub cell_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
}

impl RowKey {
    pub fn cell(cell_id: &str) -> Self {
        Self { cell_id: cell_id.to_string(), cycle: None, step: None }
    }

    pub fn cycle(cell_id: &str, cycle: u32) -> Self {
        Self { cell_id: cell_id.to_string(), cycle: Some(cycle), step: None }
    }

    pub fn step(cell_id: &str, cycle: u32, step: usize) -> Self {
        Self { cell_id: cell_id.to_string(), cycle: Some(cycle), step: Some(step) }
    }
}

/// Dense row-major feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Vec<f64>,
    n_cols: usize,
    pub row_keys: Vec<RowKey>,
    pub col_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct MatrixHeader {
    n_rows: usize,
    n_cols: usize,
    col_names: Vec<String>,
    row_keys: Vec<RowKey>,
}

impl FeatureMatrix {
    pub fn new(values: Vec<f64>, row_keys: Vec<RowKey>, col_names: Vec<String>) -> Result<Self> {
        let n_cols = col_names.len();
        if values.len() != row_keys.len() * n_cols {
            return Err(Error::Shape(format!(
                "{} values do not fill {} rows x {} columns",
                values.len(),
                row_keys.len(),
                n_cols
            )));
        }
        Ok(Self { values, n_cols, row_keys, col_names })
    }

    pub fn from_rows(rows: Vec<(RowKey, Vec<f64>)>, col_names: Vec<String>) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * col_names.len());
        let mut keys = Vec::with_capacity(rows.len());
        for (key, row) in rows {
            if row.len() != col_names.len() {
                return Err(Error::Shape(format!(
                    "row {key:?} has {} values, expected {}",
                    row.len(),
                    col_names.len()
                )));
            }
            values.extend(row);
            keys.push(key);
        }
        Self::new(values, keys, col_names)
    }

    pub fn n_rows(&self) -> usize {
        self.row_keys.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        Self {
            values,
            n_cols: self.n_cols,
            row_keys: rows.iter().map(|&r| self.row_keys[r].clone()).collect(),
            col_names: self.col_names.clone(),
        }
    }

    /// Same keys and names, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.row_keys.clone(), self.col_names.clone())
    }

    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n_rows(), self.n_cols, &self.values)
    }

    /// Writes `<stem>.bin` (column-major little-endian f64) and
    /// `<stem>.json` (shape, column names, row keys).
    pub fn write(&self, stem: &Path) -> Result<()> {
        let (bin, json) = matrix_paths(stem);
        let header = MatrixHeader {
            n_rows: self.n_rows(),
            n_cols: self.n_cols,
            col_names: self.col_names.clone(),
            row_keys: self.row_keys.clone(),
        };
        let text = serde_json::to_string_pretty(&header).expect("header serializes");
        fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
        let file = fs::File::create(&bin).map_err(|e| Error::io(&bin, e))?;
        let mut w = BufWriter::new(file);
        for j in 0..self.n_cols {
            for i in 0..self.n_rows() {
                w.write_all(&self.get(i, j).to_le_bytes()).map_err(|e| Error::io(&bin, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(&bin, e))
    }

    pub fn read(stem: &Path) -> Result<Self> {
        let (bin, json) = matrix_paths(stem);
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let header: MatrixHeader =
            serde_json::from_str(&text).map_err(|e| Error::Schema { path: json.display().to_string(), message: e.to_string() })?;
        if header.row_keys.len() != header.n_rows || header.col_names.len() != header.n_cols {
            return Err(Error::Schema { path: json.display().to_string(), message: "shape disagrees with keys/names".into() });
        }
        let mut raw = Vec::new();
        BufReader::new(fs::File::open(&bin).map_err(|e| Error::io(&bin, e))?)
            .read_to_end(&mut raw)
            .map_err(|e| Error::io(&bin, e))?;
        if raw.len() != 8 * header.n_rows * header.n_cols {
            return Err(Error::Schema { path: bin.display().to_string(), message: "payload size does not match header".into() });
        }
        let mut values = vec![0.0; header.n_rows * header.n_cols];
        for (k, chunk) in raw.chunks_exact(8).enumerate() {
            let (j, i) = (k / header.n_rows.max(1), k % header.n_rows.max(1));
            values[i * header.n_cols + j] = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        Self::new(values, header.row_keys, header.col_names)
    }
}

fn matrix_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

/// Replaces NaN and infinities with zero.
pub fn sanitize(values: &mut [f64]) {
    for v in values.iter_mut() {
        if !v.is_finite() {
            *v = 0.0;
        }
    }
}

fn default_interp_dims() -> usize {
    1000
}
fn default_critical() -> Vec<usize> {
    vec![2, 9, 99]
}
fn default_diff_base() -> usize {
    9
}
fn default_max_cycle() -> usize {
    99
}

/// Parameters shared by every extractor; `name` selects the extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(default = "default_interp_dims")]
    pub interp_dims: usize,
    #[serde(default = "default_critical")]
    pub critical_cycles: Vec<usize>,
    #[serde(default = "default_diff_base")]
    pub diff_base: usize,
    #[serde(default)]
    pub min_cycle_index: usize,
    #[serde(default = "default_max_cycle")]
    pub max_cycle_index: usize,
    /// Rows kept by the voltage-capacity matrix, ending at
    /// `max_cycle_index`. All cycles from 0 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycles_to_keep: Option<usize>,
    #[serde(default)]
    pub use_precalculated_qdlin: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
}

impl FeatureSpec {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            interp_dims: default_interp_dims(),
            critical_cycles: default_critical(),
            diff_base: default_diff_base(),
            min_cycle_index: 0,
            max_cycle_index: default_max_cycle(),
            cycles_to_keep: None,
            use_precalculated_qdlin: false,
            v_min: None,
            v_max: None,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.interp_dims < 2 {
            return Err(Error::Feature(format!("interp_dims must be >= 2, got {}", self.interp_dims)));
        }
        if let (Some(lo), Some(hi)) = (self.v_min, self.v_max) {
            if !(lo < hi) {
                return Err(Error::Feature(format!("v_min {lo} must be below v_max {hi}")));
            }
        }
        if self.min_cycle_index > self.max_cycle_index {
            return Err(Error::Feature("min_cycle_index exceeds max_cycle_index".into()));
        }
        if let Some(k) = self.cycles_to_keep {
            if k == 0 || k > self.max_cycle_index + 1 {
                return Err(Error::Feature(format!(
                    "cycles_to_keep must lie in 1..={}, got {k}",
                    self.max_cycle_index + 1
                )));
            }
        }
        Ok(())
    }

    /// `critical_cycles` as (capacity index, early index, late index).
    fn critical(&self) -> Result<(usize, usize, usize)> {
        match self.critical_cycles.as_slice() {
            &[c, early, late] if early != late => Ok((c, early, late)),
            other => Err(Error::Feature(format!(
                "critical_cycles must list three indices with distinct last two, got {other:?}"
            ))),
        }
    }
}

/// Discharge capacity on a uniform voltage grid from `v_max` down to `v_min`.
pub fn qdlinear(cycle: &CycleRecord, v_min: f64, v_max: f64, interp_dims: usize) -> Result<Vec<f64>> {
    if interp_dims < 2 {
        return Err(Error::Feature(format!("interp_dims must be >= 2, got {interp_dims}")));
    }
    if !(v_min < v_max) {
        return Err(Error::Feature(format!("empty voltage grid [{v_min}, {v_max}]")));
    }
    let curve = discharge_curve(cycle)?;
    Ok(voltage_grid(v_min, v_max, interp_dims).map(|v| curve.eval(v)).collect())
}

fn voltage_grid(v_min: f64, v_max: f64, dims: usize) -> impl Iterator<Item = f64> {
    let step = (v_max - v_min) / (dims - 1) as f64;
    (0..dims).map(move |k| if k + 1 == dims { v_min } else { v_max - step * k as f64 })
}

/// Piecewise-linear Q(V) with voltages strictly descending.
struct Curve {
    v: Vec<f64>,
    q: Vec<f64>,
}

impl Curve {
    fn eval(&self, x: f64) -> f64 {
        let n = self.v.len();
        if x >= self.v[0] {
            return self.q[0];
        }
        if x <= self.v[n - 1] {
            return self.q[n - 1];
        }
        // First index whose voltage is below x; segment is (i-1, i).
        let i = self.v.partition_point(|&vi| vi >= x);
        let (v0, v1, q0, q1) = (self.v[i - 1], self.v[i], self.q[i - 1], self.q[i]);
        q0 + (q1 - q0) * (v0 - x) / (v0 - v1)
    }
}

fn discharge_curve(cycle: &CycleRecord) -> Result<Curve> {
    let mut pts: Vec<(f64, f64)> = cycle
        .current_in_A
        .iter()
        .enumerate()
        .filter(|(_, &i)| i < 0.0)
        .map(|(k, _)| (cycle.voltage_in_V[k], cycle.discharge_capacity_in_Ah[k]))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Feature(format!("cycle {}: no discharge segment", cycle.cycle_number)));
    }
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut v = Vec::with_capacity(pts.len());
    let mut q = Vec::with_capacity(pts.len());
    let mut i = 0;
    while i < pts.len() {
        let mut j = i;
        let mut sum = 0.0;
        while j < pts.len() && pts[j].0 == pts[i].0 {
            sum += pts[j].1;
            j += 1;
        }
        v.push(pts[i].0);
        q.push(sum / (j - i) as f64);
        i = j;
    }
    if v.len() < 2 || v[0] - v[v.len() - 1] < MIN_VOLTAGE_SPAN {
        return Err(Error::Feature(format!("cycle {}: degenerate discharge voltage span", cycle.cycle_number)));
    }
    Ok(Curve { v, q })
}

/// Linearly re-samples a curve given on a uniform grid onto `dims` points
/// spanning the same range.
pub fn resample_uniform(values: &[f64], dims: usize) -> Vec<f64> {
    let n = values.len();
    if n == 1 || dims == 1 {
        return vec![values[0]; dims];
    }
    (0..dims)
        .map(|k| {
            let pos = k as f64 * (n - 1) as f64 / (dims - 1) as f64;
            let lo = (pos.floor() as usize).min(n - 2);
            let frac = pos - lo as f64;
            if frac == 0.0 {
                values[lo]
            } else {
                values[lo] + (values[lo + 1] - values[lo]) * frac
            }
        })
        .collect()
}

/// Voltage bounds for a cell: spec override, then cell limits, then the
/// observed voltage range over all cycles.
pub fn voltage_bounds(cell: &CellRecord, spec: &FeatureSpec) -> Result<(f64, f64)> {
    let observed = || {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in &cell.cycle_data {
            for &v in &c.voltage_in_V {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    };
    let lo = spec.v_min.or(cell.min_voltage_limit_in_V).unwrap_or_else(|| observed().0);
    let hi = spec.v_max.or(cell.max_voltage_limit_in_V).unwrap_or_else(|| observed().1);
    if !(lo < hi) {
        return Err(Error::Feature(format!("cell {}: empty voltage range [{lo}, {hi}]", cell.cell_id)));
    }
    Ok((lo, hi))
}

fn cache_key(v_min: f64, v_max: f64, dims: usize) -> String {
    format!("{v_min}:{v_max}:{dims}")
}

/// Stores qdlinear curves for the given cycle indices in the cell's side map.
pub fn precalculate_qdlin(cell: &mut CellRecord, v_min: f64, v_max: f64, dims: usize, indices: &[usize]) -> Result<()> {
    let mut block = serde_json::Map::new();
    for &idx in indices {
        let cycle = cycle_at(cell, idx)?;
        block.insert(idx.to_string(), serde_json::json!(qdlinear(cycle, v_min, v_max, dims)?));
    }
    let entry = cell.extra.entry(QDLIN_CACHE_KEY.to_string()).or_insert_with(|| Value::Object(Default::default()));
    match entry {
        Value::Object(map) => {
            map.insert(cache_key(v_min, v_max, dims), Value::Object(block));
            Ok(())
        }
        _ => Err(Error::Feature(format!("cell {}: {QDLIN_CACHE_KEY} is not an object", cell.cell_id))),
    }
}

fn cached_qdlin(cell: &CellRecord, v_min: f64, v_max: f64, dims: usize, idx: usize) -> Option<Vec<f64>> {
    let block = cell.extra.get(QDLIN_CACHE_KEY)?.get(cache_key(v_min, v_max, dims))?;
    let values: Vec<f64> = serde_json::from_value(block.get(idx.to_string())?.clone()).ok()?;
    (values.len() == dims).then_some(values)
}

fn cycle_at(cell: &CellRecord, idx: usize) -> Result<&CycleRecord> {
    cell.cycle_data.get(idx).ok_or_else(|| {
        Error::Feature(format!(
            "cell {}: cycle index {idx} requested but only {} cycles recorded",
            cell.cell_id,
            cell.cycle_data.len()
        ))
    })
}

/// Per-cell view that resolves voltage bounds once and serves qdlinear
/// curves, from the cache when allowed.
struct QdSource<'a> {
    cell: &'a CellRecord,
    v_min: f64,
    v_max: f64,
    dims: usize,
    use_cache: bool,
}

impl<'a> QdSource<'a> {
    fn new(cell: &'a CellRecord, spec: &FeatureSpec) -> Result<Self> {
        let (v_min, v_max) = voltage_bounds(cell, spec)?;
        Ok(Self { cell, v_min, v_max, dims: spec.interp_dims, use_cache: spec.use_precalculated_qdlin })
    }

    fn qd(&self, idx: usize) -> Result<Vec<f64>> {
        let cycle = cycle_at(self.cell, idx)?;
        if self.use_cache {
            if let Some(v) = cached_qdlin(self.cell, self.v_min, self.v_max, self.dims, idx) {
                return Ok(v);
            }
        }
        qdlinear(cycle, self.v_min, self.v_max, self.dims)
    }

    fn delta(&self, late: usize, early: usize) -> Result<Vec<f64>> {
        let a = self.qd(late)?;
        let b = self.qd(early)?;
        Ok(a.iter().zip(&b).map(|(x, y)| x - y).collect())
    }
}

/// `qdlinear(late) - qdlinear(early)`.
pub fn delta_q(cell: &CellRecord, late: usize, early: usize, v_min: f64, v_max: f64, interp_dims: usize) -> Result<Vec<f64>> {
    let a = qdlinear(cycle_at(cell, late)?, v_min, v_max, interp_dims)?;
    let b = qdlinear(cycle_at(cell, early)?, v_min, v_max, interp_dims)?;
    Ok(a.iter().zip(&b).map(|(x, y)| x - y).collect())
}

/// log10 of the floored population variance.
pub fn log_variance(delta: &[f64]) -> f64 {
    stats::population_variance(delta).max(VARIANCE_FLOOR).log10()
}

pub fn variance_feature(cell: &CellRecord, spec: &FeatureSpec) -> Result<Vec<f64>> {
    let (_, early, late) = spec.critical()?;
    let src = QdSource::new(cell, spec)?;
    let mut out = vec![log_variance(&src.delta(late, early)?)];
    sanitize(&mut out);
    Ok(out)
}

fn require_cycles(cell: &CellRecord, needed: usize) -> Result<()> {
    if cell.cycle_data.len() < needed {
        return Err(Error::Feature(format!(
            "cell {}: needs at least {needed} cycles, has {}",
            cell.cell_id,
            cell.cycle_data.len()
        )));
    }
    Ok(())
}

/// Statistics of ΔQ plus two capacity features; see [`DISCHARGE_COLUMNS`].
pub fn discharge_feature(cell: &CellRecord, spec: &FeatureSpec) -> Result<Vec<f64>> {
    let (cap_idx, early, late) = spec.critical()?;
    require_cycles(cell, cap_idx.max(early).max(late) + 1)?;
    let src = QdSource::new(cell, spec)?;
    let delta = src.delta(late, early)?;
    let min = delta.iter().copied().fold(f64::INFINITY, f64::min);
    let cap = cell.cycle_data[cap_idx].max_discharge_capacity();
    let max_cap = cell.cycle_data[1..=late.max(1)]
        .iter()
        .map(CycleRecord::max_discharge_capacity)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![
        min.abs().log10(),
        log_variance(&delta),
        stats::skewness(&delta).abs().log10(),
        stats::excess_kurtosis(&delta).abs().log10(),
        cap,
        max_cap - cap,
    ];
    sanitize(&mut out);
    Ok(out)
}

pub const DISCHARGE_COLUMNS: [&str; 6] = [
    "log_abs_min_delta_q",
    "log_var_delta_q",
    "log_abs_skew_delta_q",
    "log_abs_kurtosis_delta_q",
    "discharge_capacity_early",
    "max_minus_early_discharge_capacity",
];

pub const FULL_EXTRA_COLUMNS: [&str; 3] = ["mean_charge_time_s", "log_abs_temperature_integral", "internal_resistance_change_ohm"];

/// Duration of the charging (positive current) part of a cycle.
pub fn charge_time(cycle: &CycleRecord) -> Option<f64> {
    let first = cycle.current_in_A.iter().position(|&i| i > 0.0)?;
    let last = cycle.current_in_A.iter().rposition(|&i| i > 0.0)?;
    Some(cycle.time_in_s[last] - cycle.time_in_s[first])
}

/// Trapezoidal ∫T dt summed over cycle indices `from..=to`; `None` when any
/// of those cycles lacks a temperature trace.
pub fn temperature_integral(cell: &CellRecord, from: usize, to: usize) -> Option<f64> {
    let mut total = 0.0;
    for cycle in cell.cycle_data.get(from..=to)? {
        let temp = cycle.temperature_in_C.as_ref()?;
        for k in 1..cycle.len() {
            total += 0.5 * (temp[k] + temp[k - 1]) * (cycle.time_in_s[k] - cycle.time_in_s[k - 1]);
        }
    }
    Some(total)
}

/// Recorded resistance, else |ΔV/ΔI| across the first change in current.
pub fn internal_resistance(cycle: &CycleRecord) -> Option<f64> {
    if let Some(r) = cycle.internal_resistance_in_ohm {
        return Some(r);
    }
    (1..cycle.len()).find_map(|k| {
        let di = cycle.current_in_A[k] - cycle.current_in_A[k - 1];
        (di.abs() > 1e-6).then(|| ((cycle.voltage_in_V[k] - cycle.voltage_in_V[k - 1]) / di).abs())
    })
}

pub fn full_feature(cell: &CellRecord, spec: &FeatureSpec) -> Result<Vec<f64>> {
    let mut out = discharge_feature(cell, spec)?;
    let (start, _, late) = spec.critical()?;
    let times: Option<Vec<f64>> = cell.cycle_data.get(start..=start + 4).map(|cs| cs.iter().filter_map(charge_time).collect());
    let charge = match times {
        Some(t) if t.len() == 5 => stats::mean(&t),
        _ => f64::NAN,
    };
    let temp = temperature_integral(cell, start, late).map_or(f64::NAN, |t| t.abs().log10());
    let ir: Option<Vec<f64>> = cell.cycle_data.get(start..=late).and_then(|cs| cs.iter().map(internal_resistance).collect());
    let ir = match ir {
        Some(r) if !r.is_empty() => r[0] - r.iter().copied().fold(f64::INFINITY, f64::min),
        _ => f64::NAN,
    };
    out.extend([charge, temp, ir]);
    sanitize(&mut out);
    Ok(out)
}

/// Guarded ratio of final discharge to final charge capacity.
pub fn coulombic_efficiency(cycle: &CycleRecord) -> f64 {
    let qd = cycle.discharge_capacity_in_Ah.last().copied().unwrap_or(0.0);
    let qc = cycle.charge_capacity_in_Ah.last().copied().unwrap_or(0.0);
    qd / (qc + 1e-5)
}

/// Rows `j` in the window ending at `max_cycle_index` hold
/// `qdlinear(j) - qdlinear(diff_base)`.
pub fn qd_matrix(cell: &CellRecord, spec: &FeatureSpec) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    spec.check()?;
    require_cycles(cell, spec.max_cycle_index.max(spec.diff_base) + 1)?;
    let keep = spec.cycles_to_keep.unwrap_or(spec.max_cycle_index + 1);
    let first = spec.max_cycle_index + 1 - keep;
    let src = QdSource::new(cell, spec)?;
    let base = src.qd(spec.diff_base)?;
    let mut rows = Vec::with_capacity(keep);
    for j in first..=spec.max_cycle_index {
        let mut row: Vec<f64> = src.qd(j)?.iter().zip(&base).map(|(a, b)| a - b).collect();
        sanitize(&mut row);
        rows.push(row);
    }
    Ok(((first..=spec.max_cycle_index).collect(), rows))
}

/// `[max Qc / nominal, mean V, min V, max V of the first cycle, CE, cycle number]`.
pub fn soh_cycle_features(cell: &CellRecord, cycle_index: usize) -> Result<Vec<f64>> {
    let cycle = cycle_at(cell, cycle_index)?;
    let first = &cell.cycle_data[0].voltage_in_V;
    let mut out = vec![
        cycle.max_charge_capacity() / cell.nominal_capacity_in_Ah,
        stats::mean(first),
        first.iter().copied().fold(f64::INFINITY, f64::min),
        first.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        coulombic_efficiency(cycle),
        cycle.cycle_number as f64,
    ];
    sanitize(&mut out);
    Ok(out)
}

pub const SOH_COLUMNS: [&str; 6] =
    ["max_charge_capacity_ratio", "first_cycle_voltage_mean", "first_cycle_voltage_min", "first_cycle_voltage_max", "coulombic_efficiency", "cycle_number"];

fn soc_col_names(prev_missing: bool) -> Vec<String> {
    let mut names = vec!["current_A".to_string(), "voltage_V".to_string(), "elapsed_time_s".to_string()];
    let suffix = if prev_missing { " (zero-filled)" } else { "" };
    names.extend((0..SOC_PREV_DIMS).map(|k| format!("prev_qdlin_{k:02}{suffix}")));
    names
}

/// One row per sample: current, voltage, elapsed time, then the previous
/// cycle's discharge curve on a 32-point grid.
pub fn soc_step_features(cell: &CellRecord, cycle_index: usize, spec: &FeatureSpec) -> Result<FeatureMatrix> {
    let cycle = cycle_at(cell, cycle_index)?;
    let (v_min, v_max) = voltage_bounds(cell, spec)?;
    let prev = match cycle_index.checked_sub(1) {
        Some(p) => Some(qdlinear(&cell.cycle_data[p], v_min, v_max, SOC_PREV_DIMS)?),
        None => None,
    };
    let names = soc_col_names(prev.is_none());
    let block = prev.unwrap_or_else(|| vec![0.0; SOC_PREV_DIMS]);
    let t0 = cycle.time_in_s[0];
    let mut values = Vec::with_capacity(cycle.len() * names.len());
    for k in 0..cycle.len() {
        values.extend([cycle.current_in_A[k], cycle.voltage_in_V[k], cycle.time_in_s[k] - t0]);
        values.extend_from_slice(&block);
    }
    sanitize(&mut values);
    let keys = (0..cycle.len()).map(|k| RowKey::step(&cell.cell_id, cycle.cycle_number, k)).collect();
    FeatureMatrix::new(values, keys, names)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Granularity {
    Cell,
    Cycle,
    Step,
}

/// A registered feature extractor. Rows are keyed so they can be joined
/// with labels of the same granularity.
pub trait FeatureExtractor: Send + Sync {
    fn granularity(&self) -> Granularity;
    fn col_names(&self) -> Vec<String>;
    fn process_cell(&self, cell: &CellRecord) -> Result<Vec<(RowKey, Vec<f64>)>>;
}

pub struct VarianceExtractor(pub FeatureSpec);
pub struct DischargeExtractor(pub FeatureSpec);
pub struct FullExtractor(pub FeatureSpec);
pub struct QdMatrixExtractor(pub FeatureSpec);
pub struct CoulombicEfficiencyExtractor(pub FeatureSpec);
pub struct CapacityFadeExtractor(pub FeatureSpec);
pub struct SohExtractor(pub FeatureSpec);
pub struct SocExtractor(pub FeatureSpec);

fn one_row(cell: &CellRecord, row: Vec<f64>) -> Vec<(RowKey, Vec<f64>)> {
    vec![(RowKey::cell(&cell.cell_id), row)]
}

impl FeatureExtractor for VarianceExtractor {
    fn granularity(&self) -> Granularity {
        Granularity::Cell
    }
    fn col_names(&self) -> Vec<String> {
        vec!["log_var_delta_q".into()]
    }
    fn process_cell(&self, cell: &CellRecord) -> Result<Vec<(RowKey, Vec<f64>)>> {
        Ok(one_row(cell, variance_feature(cell, &self.0)?))
    }
}

impl FeatureExtractor for DischargeExtractor {
    fn granularity(&self) -> Granularity {
        Granularity::Cell
    }
    fn col_names(&self) -> Vec<String> {
        DISCHARGE_COLUMNS.iter().map(|s| s.to_string()).collect()
    }
    fn process_cell(&self, cell: &CellRecord) -> Result<Vec<(RowKey, Vec<f64>)>> {
        Ok(one_row(cell, discharge_feature(cell, &self.0)?))
    }
}

impl FeatureExtractor for FullExtractor {
    fn granularity(&self) -> Granularity {
        Granularity::Cell
    }
    fn col_names(&self) -> Vec<String> {
        DISCHARGE_COLUMNS.iter().chain(FULL_EXTRA_COLUMNS.iter()).map(|s| s.to_string()).collect()
    }
    fn process_cell(&self, cell: &CellRecord) -> Result<Vec<(RowKey, Vec<f64>)>> {
        Ok(one_row(cell, full_feature(cell, &self.0)?))
    }
}

impl FeatureExtractor for QdMatrixExtractor {
    fn granularity(&self) -> Granularity {
        Granularity::Cell
    }
    fn col_names(&self) -> Vec<String> {
        let s = &self.0;
        let keep = s.cycles_to_keep.unwrap_or(s.max_cycle_index + 1);
        let first = s.max_cycle_index + 1 - keep;
        (first..=s.max_cycle_index)
            .flat_map(|j| (0..s.interp_dims).map(move |k| format!("dq_c{j}_v{k}")))
            .collect()
    }
    fn process_cell(&self, cell: &CellRecord) -> Result<Vec<(RowKey, Vec<f64>)>> {
        let (_, rows) = qd_matrix(cell, &self.0)?;
        Ok(one_row(cell, rows.concat()))
    }
}

impl FeatureExtractor for CoulombicEfficiencyExtractor {
    fn granularity(&self) -> Granularity {
        Granularity::Cell
    }
    fn col_names(&self) -> Vec<String> {
        vec!["ce_mean".into(), "ce_std".into(), "ce_var".into()]
    }
    fn process_cell(&self, cell: &CellRecord) -> Result<Vec<(RowKey, Vec<f64>)>> {
        let s = &self.0;
        let ce: Vec<f64> = cell
            .cycle_data
            .iter()
            .enumerate()
            .filter(|(i, _)| (s.min_cycle_index..=s.max_cycle_index).contains(i))
            .map(|(_, c)| coulombic_efficiency(c))
            .collect();
        if ce.is_empty() {
            return Err(Error::Feature(format!("cell {}: no cycles in the requested window", cell.cell_id)));
        }
        let var = stats::sample_variance(&ce);
        let mut row = vec![stats::mean(&ce), var.sqrt(), var];
        sanitize(&mut row);
        Ok(one_row(cell, row))
    }
}

impl FeatureExtractor for CapacityFadeExtractor {
    fn granularity(&self) -> Granularity {
        Granularity::Cell
    }
    fn col_names(&self) -> Vec<String> {
        vec!["soh_slope_per_cycle".into()]
    }
    fn process_cell(&self, cell: &CellRecord) -> Result<Vec<(RowKey, Vec<f64>)>> {
        let (start, _, late) = self.0.critical()?;
        require_cycles(cell, late + 1)?;
        let soh = crate::labels::soh_per_cycle(cell)?;
        let x: Vec<f64> = (start..=late).map(|i| i as f64).collect();
        let mut row = vec![stats::slope(&x, &soh[start..=late])];
        sanitize(&mut row);
        Ok(one_row(cell, row))
    }
}

fn cycle_window(cell: &CellRecord, spec: &FeatureSpec, skip_first: bool) -> std::ops::Range<usize> {
    let lo = if skip_first { spec.min_cycle_index.max(1) } else { spec.min_cycle_index };
    let hi = (spec.max_cycle_index + 1).min(cell.cycle_data.len());
    lo..hi.max(lo)
}

impl FeatureExtractor for SohExtractor {
    fn granularity(&self) -> Granularity {
        Granularity::Cycle
    }
    fn col_names(&self) -> Vec<String> {
        SOH_COLUMNS.iter().map(|s| s.to_string()).collect()
    }
    fn process_cell(&self, cell: &CellRecord) -> Result<Vec<(RowKey, Vec<f64>)>> {
        cycle_window(cell, &self.0, false)
            .map(|i| Ok((RowKey::cycle(&cell.cell_id, cell.cycle_data[i].cycle_number), soh_cycle_features(cell, i)?)))
            .collect()
    }
}

impl FeatureExtractor for SocExtractor {
    fn granularity(&self) -> Granularity {
        Granularity::Step
    }
    fn col_names(&self) -> Vec<String> {
        soc_col_names(false)
    }
    /// The first cycle has no predecessor and is skipped so every row
    /// carries a real previous-cycle block.
    fn process_cell(&self, cell: &CellRecord) -> Result<Vec<(RowKey, Vec<f64>)>> {
        let mut rows = Vec::new();
        for i in cycle_window(cell, &self.0, true) {
            let m = soc_step_features(cell, i, &self.0)?;
            for r in 0..m.n_rows() {
                rows.push((m.row_keys[r].clone(), m.row(r).to_vec()));
            }
        }
        Ok(rows)
    }
}

/// Runs an extractor over a corpus in parallel. Rows keep corpus order;
/// cells whose extraction fails are reported with the reason.
pub fn extract_corpus(extractor: &dyn FeatureExtractor, cells: &[CellRecord]) -> Result<(FeatureMatrix, Vec<(String, String)>)> {
    let results: Vec<Result<Vec<(RowKey, Vec<f64>)>>> = cells.par_iter().map(|c| extractor.process_cell(c)).collect();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for (cell, res) in cells.iter().zip(results) {
        match res {
            Ok(r) => rows.extend(r),
            Err(e) => failed.push((cell.cell_id.clone(), e.to_string())),
        }
    }
    Ok((FeatureMatrix::from_rows(rows, extractor.col_names())?, failed))
}

/// Rows grouped per cell id, in first-seen order.
pub fn rows_by_cell(keys: &[RowKey]) -> BTreeMap<&str, Vec<usize>> {
    let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        map.entry(k.cell_id.as_str()).or_default().push(i);
    }
    map
}

pub type BoxedExtractor = Box<dyn FeatureExtractor>;

/// Registry with the built-in extractors. Parameters are the
/// [`FeatureSpec`] fields other than `name`.
pub fn default_registry() -> Registry<BoxedExtractor> {
    let mut reg: Registry<BoxedExtractor> = Registry::new("feature extractor");
    let entries: [(&str, fn(FeatureSpec) -> BoxedExtractor); 8] = [
        ("VarianceModelFeatureExtractor", |s| Box::new(VarianceExtractor(s))),
        ("DischargeModelFeatureExtractor", |s| Box::new(DischargeExtractor(s))),
        ("FullModelFeatureExtractor", |s| Box::new(FullExtractor(s))),
        ("VoltageCapacityMatrixFeatureExtractor", |s| Box::new(QdMatrixExtractor(s))),
        ("CoulombicEfficiencyFeatureExtractor", |s| Box::new(CoulombicEfficiencyExtractor(s))),
        ("CapacityFadeFeatureExtractor", |s| Box::new(CapacityFadeExtractor(s))),
        ("SOHFeatureExtractor", |s| Box::new(SohExtractor(s))),
        ("SOCFeatureExtractor", |s| Box::new(SocExtractor(s))),
    ];
    for (name, make) in entries {
        reg.register(name, move |p, _| {
            let mut with_name = p.clone();
            with_name.insert("name".into(), Value::String(name.into()));
            let spec: FeatureSpec = parse_params("feature extractor", name, &with_name)?;
            spec.check()?;
            Ok(make(spec))
        })
        .expect("unique built-in names");
    }
    reg
}
