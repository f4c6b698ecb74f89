//! Generic CSV cycler dialect driven by a user-supplied column map.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::battery_data::{validate, CellRecord, CycleRecord};
use crate::error::{Error, Result};

/// Maps logical signal names onto CSV header strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMap {
    pub time_s: String,
    pub voltage_V: String,
    pub current_A: String,
    pub cycle_index: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charge_capacity_Ah: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discharge_capacity_Ah: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_C: Option<String>,
}

impl ColumnMap {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema { path: path.display().to_string(), message: e.to_string() })
    }
}

/// Cell-level metadata the CSV does not carry.
#[derive(Debug, Clone, PartialEq)]
pub struct CellDefaults {
    pub cell_id: String,
    pub nominal_capacity_in_Ah: f64,
    pub min_voltage_limit_in_V: Option<f64>,
    pub max_voltage_limit_in_V: Option<f64>,
    pub cathode_material: Option<String>,
    pub anode_material: Option<String>,
}

impl CellDefaults {
    pub fn new(cell_id: impl Into<String>, nominal_capacity_in_Ah: f64) -> Self {
        Self {
            cell_id: cell_id.into(),
            nominal_capacity_in_Ah,
            min_voltage_limit_in_V: None,
            max_voltage_limit_in_V: None,
            cathode_material: None,
            anode_material: None,
        }
    }
}

pub fn parse_csv_cycler(path: &Path, map: &ColumnMap, defaults: &CellDefaults) -> Result<CellRecord> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv_reader(file, map, defaults)
}

#[derive(Default)]
struct Rows {
    time: Vec<f64>,
    voltage: Vec<f64>,
    current: Vec<f64>,
    qc: Vec<f64>,
    qd: Vec<f64>,
    temperature: Vec<f64>,
}

/// Parses CSV text from any reader. Rows are grouped by cycle index in
/// ascending order; capacities missing from the file are integrated from
/// current with the trapezoidal rule, split by current sign.
pub fn parse_csv_reader<R: Read>(reader: R, map: &ColumnMap, defaults: &CellDefaults) -> Result<CellRecord> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Csv(format!("mapped column {name:?} not found in header")))
    };
    let time_col = column(&map.time_s)?;
    let volt_col = column(&map.voltage_V)?;
    let curr_col = column(&map.current_A)?;
    let cyc_col = column(&map.cycle_index)?;
    let qc_col = map.charge_capacity_Ah.as_deref().map(column).transpose()?;
    let qd_col = map.discharge_capacity_Ah.as_deref().map(column).transpose()?;
    let temp_col = map.temperature_C.as_deref().map(column).transpose()?;

    let mut groups: BTreeMap<i64, Rows> = BTreeMap::new();
    let mut n_rows = 0usize;
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        // Row numbers are 1-based and count the header line.
        let line = row_idx + 2;
        let num = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Csv(format!("row {line}, column {:?}: non-numeric value {raw:?}", &headers[col])))
        };
        let cycle_raw = num(cyc_col)?;
        if cycle_raw.fract() != 0.0 {
            return Err(Error::Csv(format!(
                "row {line}, column {:?}: cycle index {cycle_raw} is not an integer",
                &headers[cyc_col]
            )));
        }
        let rows = groups.entry(cycle_raw as i64).or_default();
        rows.time.push(num(time_col)?);
        rows.voltage.push(num(volt_col)?);
        rows.current.push(num(curr_col)?);
        if let Some(c) = qc_col {
            rows.qc.push(num(c)?);
        }
        if let Some(c) = qd_col {
            rows.qd.push(num(c)?);
        }
        if let Some(c) = temp_col {
            rows.temperature.push(num(c)?);
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::Csv("file contains no data rows".into()));
    }

    // Zero-based cycle indices are shifted so cycle numbers start at 1.
    let min_index = *groups.keys().next().expect("non-empty");
    let offset = if min_index < 1 { 1 - min_index } else { 0 };
    let mut cycles = Vec::with_capacity(groups.len());
    for (index, rows) in groups {
        let (qc, qd) = match (qc_col, qd_col) {
            (Some(_), Some(_)) => (rows.qc, rows.qd),
            (qc_opt, qd_opt) => {
                let (ic, id) = integrate_capacity(&rows.time, &rows.current);
                (if qc_opt.is_some() { rows.qc } else { ic }, if qd_opt.is_some() { rows.qd } else { id })
            }
        };
        let number = u32::try_from(index + offset)
            .map_err(|_| Error::Csv(format!("cycle index {index} out of range")))?;
        cycles.push(CycleRecord {
            cycle_number: number,
            voltage_in_V: rows.voltage,
            current_in_A: rows.current,
            charge_capacity_in_Ah: qc,
            discharge_capacity_in_Ah: qd,
            time_in_s: rows.time,
            temperature_in_C: temp_col.map(|_| rows.temperature),
            internal_resistance_in_ohm: None,
            extra: BTreeMap::new(),
        });
    }

    let mut cell = CellRecord::new(defaults.cell_id.clone(), defaults.nominal_capacity_in_Ah, cycles);
    cell.min_voltage_limit_in_V = defaults.min_voltage_limit_in_V;
    cell.max_voltage_limit_in_V = defaults.max_voltage_limit_in_V;
    cell.cathode_material = defaults.cathode_material.clone();
    cell.anode_material = defaults.anode_material.clone();
    let violations = validate(&cell);
    if !violations.is_empty() {
        return Err(Error::InvalidCell { cell_id: cell.cell_id, violations });
    }
    Ok(cell)
}

/// Cumulative (charge, discharge) capacity in Ah from signed current.
pub fn integrate_capacity(time_s: &[f64], current_a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = time_s.len();
    let mut qc = Vec::with_capacity(n);
    let mut qd = Vec::with_capacity(n);
    let (mut c, mut d) = (0.0, 0.0);
    for i in 0..n {
        if i > 0 {
            let dt = time_s[i] - time_s[i - 1];
            let (a, b) = (current_a[i - 1], current_a[i]);
            c += 0.5 * (a.max(0.0) + b.max(0.0)) * dt / 3600.0;
            d += 0.5 * ((-a).max(0.0) + (-b).max(0.0)) * dt / 3600.0;
        }
        qc.push(c);
        qd.push(d);
    }
    (qc, qd)
}
