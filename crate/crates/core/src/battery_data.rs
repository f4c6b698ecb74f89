//! Unified per-cell representation of battery cycling data.
//!
//! A [`CellRecord`] holds cell-level metadata, the ordered list of
//! [`CycleRecord`]s and the charge/discharge protocols. One cell is stored
//! as one JSON document whose keys use the snake_case, unit-suffixed field
//! names below. Keys the schema does not know about are kept in
//! `extra` so that a read/write cycle never drops vendor annotations.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Tolerance (Ah) for capacity monotonicity checks.
pub const CAPACITY_JITTER_AH: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form_factor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anode_material: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cathode_material: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub electrolyte_material: Option<String>,
    pub nominal_capacity_in_Ah: f64,
    #[serde(default = "one")]
    pub depth_of_charge: f64,
    #[serde(default = "one")]
    pub depth_of_discharge: f64,
    #[serde(default)]
    pub already_spent_cycles: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_voltage_limit_in_V: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_voltage_limit_in_V: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_current_limit_in_A: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_current_limit_in_A: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub cycle_data: Vec<CycleRecord>,
    #[serde(default)]
    pub charge_protocol: Vec<ProtocolStep>,
    #[serde(default)]
    pub discharge_protocol: Vec<ProtocolStep>,
    /// Unknown top-level keys, retained verbatim.
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

fn one() -> f64 {
    1.0
}

/// Time series of one charge/discharge cycle.
///
/// Current is signed: charge positive, discharge negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle_number: u32,
    pub voltage_in_V: Vec<f64>,
    pub current_in_A: Vec<f64>,
    pub charge_capacity_in_Ah: Vec<f64>,
    pub discharge_capacity_in_Ah: Vec<f64>,
    pub time_in_s: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_in_C: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub internal_resistance_in_ohm: Option<f64>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProtocolStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_in_C: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_in_A: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voltage_in_V: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_in_W: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_voltage_in_V: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_soc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_voltage_in_V: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_soc: Option<f64>,
}

impl CycleRecord {
    pub fn len(&self) -> usize {
        self.time_in_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_in_s.is_empty()
    }

    /// Largest discharge capacity reached during the cycle.
    pub fn max_discharge_capacity(&self) -> f64 {
        max_of(&self.discharge_capacity_in_Ah)
    }

    pub fn max_charge_capacity(&self) -> f64 {
        max_of(&self.charge_capacity_in_Ah)
    }
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

impl CellRecord {
    /// Minimal record with metadata defaults; callers fill in the rest.
    pub fn new(cell_id: impl Into<String>, nominal_capacity_in_Ah: f64, cycle_data: Vec<CycleRecord>) -> Self {
        Self {
            cell_id: cell_id.into(),
            form_factor: None,
            anode_material: None,
            cathode_material: None,
            electrolyte_material: None,
            nominal_capacity_in_Ah,
            depth_of_charge: 1.0,
            depth_of_discharge: 1.0,
            already_spent_cycles: 0,
            max_voltage_limit_in_V: None,
            min_voltage_limit_in_V: None,
            max_current_limit_in_A: None,
            min_current_limit_in_A: None,
            description: None,
            cycle_data,
            charge_protocol: Vec::new(),
            discharge_protocol: Vec::new(),
            extra: BTreeMap::new(),
        }
    }
}

/// One broken invariant, located by a field path such as
/// `cycle_data[3].time_in_s`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub reason: String,
}

impl Violation {
    fn new(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Self { path: path.into(), reason: reason.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

/// Lists every invariant the cell breaks. An empty list means the cell is valid.
pub fn validate(cell: &CellRecord) -> Vec<Violation> {
    let mut out = Vec::new();

    if cell.cell_id.trim().is_empty() {
        out.push(Violation::new("cell_id", "must be a non-empty string"));
    }
    if !(cell.nominal_capacity_in_Ah.is_finite() && cell.nominal_capacity_in_Ah > 0.0) {
        out.push(Violation::new("nominal_capacity_in_Ah", "must be a positive finite number"));
    }
    for (name, value) in [("depth_of_charge", cell.depth_of_charge), ("depth_of_discharge", cell.depth_of_discharge)] {
        if !(value > 0.0 && value <= 1.0) {
            out.push(Violation::new(name, "must lie in (0, 1]"));
        }
    }
    for (name, value) in [
        ("max_voltage_limit_in_V", cell.max_voltage_limit_in_V),
        ("min_voltage_limit_in_V", cell.min_voltage_limit_in_V),
        ("max_current_limit_in_A", cell.max_current_limit_in_A),
        ("min_current_limit_in_A", cell.min_current_limit_in_A),
    ] {
        if matches!(value, Some(v) if !v.is_finite()) {
            out.push(Violation::new(name, "must be finite"));
        }
    }
    if let (Some(lo), Some(hi)) = (cell.min_voltage_limit_in_V, cell.max_voltage_limit_in_V) {
        if lo >= hi {
            out.push(Violation::new(
                "min_voltage_limit_in_V",
                "must be below max_voltage_limit_in_V",
            ));
        }
    }

    if cell.cycle_data.is_empty() {
        out.push(Violation::new("cycle_data", "must contain at least one cycle"));
    }
    for pair in cell.cycle_data.windows(2).enumerate() {
        let (i, w) = pair;
        if w[1].cycle_number <= w[0].cycle_number {
            out.push(Violation::new(
                format!("cycle_data[{}].cycle_number", i + 1),
                "cycle numbers must be strictly ascending",
            ));
        }
    }
    for (i, cycle) in cell.cycle_data.iter().enumerate() {
        validate_cycle(cycle, &format!("cycle_data[{i}]"), &mut out);
    }

    for (list, steps) in [("charge_protocol", &cell.charge_protocol), ("discharge_protocol", &cell.discharge_protocol)] {
        for (i, step) in steps.iter().enumerate() {
            validate_step(step, &format!("{list}[{i}]"), &mut out);
        }
    }
    out
}

fn validate_cycle(cycle: &CycleRecord, prefix: &str, out: &mut Vec<Violation>) {
    if cycle.cycle_number == 0 {
        out.push(Violation::new(format!("{prefix}.cycle_number"), "must be a positive integer"));
    }
    let n = cycle.time_in_s.len();
    if n < 2 {
        out.push(Violation::new(format!("{prefix}.time_in_s"), "needs at least 2 samples"));
    }
    let series: [(&str, &[f64]); 5] = [
        ("voltage_in_V", &cycle.voltage_in_V),
        ("current_in_A", &cycle.current_in_A),
        ("charge_capacity_in_Ah", &cycle.charge_capacity_in_Ah),
        ("discharge_capacity_in_Ah", &cycle.discharge_capacity_in_Ah),
        ("time_in_s", &cycle.time_in_s),
    ];
    for (name, values) in series {
        if values.len() != n {
            out.push(Violation::new(
                format!("{prefix}.{name}"),
                format!("length {} differs from time_in_s length {n}", values.len()),
            ));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            out.push(Violation::new(format!("{prefix}.{name}[{j}]"), "non-finite value"));
        }
    }
    if let Some(temps) = &cycle.temperature_in_C {
        if temps.len() != n {
            out.push(Violation::new(
                format!("{prefix}.temperature_in_C"),
                format!("length {} differs from time_in_s length {n}", temps.len()),
            ));
        }
        if let Some(j) = temps.iter().position(|v| !v.is_finite()) {
            out.push(Violation::new(format!("{prefix}.temperature_in_C[{j}]"), "non-finite value"));
        }
    }
    if let Some(r) = cycle.internal_resistance_in_ohm {
        if !r.is_finite() {
            out.push(Violation::new(format!("{prefix}.internal_resistance_in_ohm"), "non-finite value"));
        }
    }
    if let Some(j) = cycle.time_in_s.windows(2).position(|w| w[1] <= w[0]) {
        out.push(Violation::new(
            format!("{prefix}.time_in_s[{}]", j + 1),
            "time not strictly increasing",
        ));
    }
    for (name, values) in [
        ("charge_capacity_in_Ah", &cycle.charge_capacity_in_Ah),
        ("discharge_capacity_in_Ah", &cycle.discharge_capacity_in_Ah),
    ] {
        if let Some(j) = values.windows(2).position(|w| w[1] < w[0] - CAPACITY_JITTER_AH) {
            out.push(Violation::new(format!("{prefix}.{name}[{}]", j + 1), "capacity decreases"));
        }
    }
}

fn validate_step(step: &ProtocolStep, prefix: &str, out: &mut Vec<Violation>) {
    if step.rate_in_C.is_none() && step.current_in_A.is_none() && step.voltage_in_V.is_none() && step.power_in_W.is_none() {
        out.push(Violation::new(
            prefix.to_string(),
            "one of rate_in_C, current_in_A, voltage_in_V, power_in_W is required",
        ));
    }
    for (name, soc) in [("start_soc", step.start_soc), ("end_soc", step.end_soc)] {
        if matches!(soc, Some(s) if !(0.0..=1.0).contains(&s)) {
            out.push(Violation::new(format!("{prefix}.{name}"), "must lie in [0, 1]"));
        }
    }
}

/// Writes the cell as pretty JSON. Refuses to write an invalid cell.
pub fn write_cell(cell: &CellRecord, path: &Path) -> Result<()> {
    let violations = validate(cell);
    if !violations.is_empty() {
        return Err(Error::InvalidCell { cell_id: cell.cell_id.clone(), violations });
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer(&mut writer, cell).map_err(|e| Error::Schema {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_cell(path: &Path) -> Result<CellRecord> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let value: Value = serde_json::from_reader(reader).map_err(|e| Error::Schema {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    cell_from_value(value).map_err(|message| Error::Schema { path: path.display().to_string(), message })
}

/// Parses a cell from a JSON string. The error message names the
/// offending field path.
pub fn cell_from_str(text: &str) -> std::result::Result<CellRecord, String> {
    let value: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    cell_from_value(value)
}

fn cell_from_value(value: Value) -> std::result::Result<CellRecord, String> {
    // Pre-check mandatory fields so the message carries a path even when
    // serde's flatten machinery loses it.
    let obj = value.as_object().ok_or_else(|| "top level: expected a JSON object".to_string())?;
    for key in ["cell_id", "nominal_capacity_in_Ah", "cycle_data"] {
        if !obj.contains_key(key) {
            return Err(format!("{key}: missing mandatory field"));
        }
    }
    if let Some(cycles) = obj.get("cycle_data").and_then(Value::as_array) {
        for (i, c) in cycles.iter().enumerate() {
            let Some(c) = c.as_object() else {
                return Err(format!("cycle_data[{i}]: expected an object"));
            };
            for key in ["cycle_number", "voltage_in_V", "current_in_A", "charge_capacity_in_Ah", "discharge_capacity_in_Ah", "time_in_s"] {
                if !c.contains_key(key) {
                    return Err(format!("cycle_data[{i}].{key}: missing mandatory field"));
                }
            }
        }
    }
    serde_json::from_value(value).map_err(|e| format!("schema violation: {e}"))
}

pub fn cell_to_string(cell: &CellRecord) -> String {
    serde_json::to_string(cell).expect("cell records always serialize")
}

/// File name used for a cell inside a corpus directory.
pub fn cell_file_name(cell_id: &str) -> String {
    format!("{cell_id}.json")
}

/// Cell identifiers available in a corpus directory, sorted.
pub fn list_cell_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn read_cell_by_id(dir: &Path, cell_id: &str) -> Result<CellRecord> {
    let path = dir.join(cell_file_name(cell_id));
    if !path.exists() {
        return Err(Error::MissingCell { cell_id: cell_id.to_string(), dir: dir.display().to_string() });
    }
    read_cell(&path)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny_cycle(number: u32) -> CycleRecord {
        CycleRecord {
            cycle_number: number,
            voltage_in_V: vec![3.0, 3.5, 3.2, 2.5],
            current_in_A: vec![1.0, 1.0, -1.0, -1.0],
            charge_capacity_in_Ah: vec![0.0, 0.5, 0.5, 0.5],
            discharge_capacity_in_Ah: vec![0.0, 0.0, 0.2, 0.45],
            time_in_s: vec![0.0, 1800.0, 1900.0, 3500.0],
            temperature_in_C: None,
            internal_resistance_in_ohm: Some(0.02),
            extra: BTreeMap::new(),
        }
    }

    pub(crate) fn tiny_cell() -> CellRecord {
        let mut cell = CellRecord::new("T1", 0.5, (1..=3).map(tiny_cycle).collect());
        cell.max_voltage_limit_in_V = Some(3.6);
        cell.min_voltage_limit_in_V = Some(2.0);
        cell
    }

    #[test]
    fn valid_cell_has_no_violations() {
        assert!(validate(&tiny_cell()).is_empty());
    }

    #[test]
    fn zero_nominal_capacity_is_reported() {
        let mut cell = tiny_cell();
        cell.nominal_capacity_in_Ah = 0.0;
        let v = validate(&cell);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "nominal_capacity_in_Ah");
    }

    #[test]
    fn repeated_timestamp_is_reported() {
        let mut cell = tiny_cell();
        cell.cycle_data[1].time_in_s[2] = cell.cycle_data[1].time_in_s[1];
        let v = validate(&cell);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "cycle_data[1].time_in_s[2]");
        assert_eq!(v[0].reason, "time not strictly increasing");
    }

    #[test]
    fn length_mismatch_is_a_violation_not_truncation() {
        let mut cell = tiny_cell();
        cell.cycle_data[0].voltage_in_V.pop();
        let v = validate(&cell);
        assert!(v.iter().any(|v| v.path == "cycle_data[0].voltage_in_V"));
    }

    #[test]
    fn unsorted_cycles_and_bad_protocol() {
        let mut cell = tiny_cell();
        cell.cycle_data.swap(0, 1);
        cell.charge_protocol.push(ProtocolStep { start_soc: Some(1.5), ..Default::default() });
        let paths: Vec<_> = validate(&cell).into_iter().map(|v| v.path).collect();
        assert!(paths.contains(&"cycle_data[1].cycle_number".to_string()));
        assert!(paths.contains(&"charge_protocol[0]".to_string()));
        assert!(paths.contains(&"charge_protocol[0].start_soc".to_string()));
    }

    #[test]
    fn voltage_limits_must_be_ordered() {
        let mut cell = tiny_cell();
        cell.min_voltage_limit_in_V = Some(4.0);
        assert_eq!(validate(&cell)[0].path, "min_voltage_limit_in_V");
    }

    #[test]
    fn capacity_jitter_within_tolerance_is_accepted() {
        let mut cell = tiny_cell();
        cell.cycle_data[0].discharge_capacity_in_Ah[3] = 0.2 - 5e-10;
        cell.cycle_data[0].discharge_capacity_in_Ah[2] = 0.2;
        assert!(validate(&cell).is_empty());
        cell.cycle_data[0].discharge_capacity_in_Ah[3] = 0.2 - 1e-6;
        assert_eq!(validate(&cell).len(), 1);
    }

    #[test]
    fn validate_is_pure() {
        let mut cell = tiny_cell();
        cell.depth_of_charge = 0.0;
        assert_eq!(validate(&cell), validate(&cell));
    }

    #[test]
    fn missing_optional_signals_are_absent_keys() {
        let text = cell_to_string(&tiny_cell());
        assert!(!text.contains("temperature_in_C"));
        assert!(!text.contains("null"));
    }

    #[test]
    fn missing_cycle_data_names_the_field() {
        let err = cell_from_str(r#"{"cell_id":"x","nominal_capacity_in_Ah":1.1}"#).unwrap_err();
        assert!(err.contains("cycle_data"), "{err}");
    }

    #[test]
    fn wrong_type_is_a_schema_error() {
        let mut value = serde_json::to_value(tiny_cell()).unwrap();
        value["nominal_capacity_in_Ah"] = Value::String("big".into());
        assert!(cell_from_str(&value.to_string()).is_err());
    }

    #[test]
    fn unknown_fields_survive_round_trip() {
        let mut value = serde_json::to_value(tiny_cell()).unwrap();
        value["vendor_notes"] = Value::String("arbin channel 7".into());
        value["cycle_data"][0]["aux_pressure"] = serde_json::json!([1.0, 2.0, 3.0, 4.0]);
        let cell = cell_from_str(&value.to_string()).unwrap();
        assert_eq!(cell.extra["vendor_notes"], "arbin channel 7");
        assert!(cell.cycle_data[0].extra.contains_key("aux_pressure"));
        let again = cell_from_str(&cell_to_string(&cell)).unwrap();
        assert_eq!(again, cell);
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut cell = tiny_cell();
        cell.cycle_data[0].voltage_in_V[1] = 0.1 + 0.2;
        cell.cycle_data[0].time_in_s[3] = 3500.000_000_000_001;
        let path = dir.path().join(cell_file_name(&cell.cell_id));
        write_cell(&cell, &path).unwrap();
        let back = read_cell(&path).unwrap();
        assert_eq!(back, cell);
        assert_eq!(back.cycle_data[0].voltage_in_V[1].to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(list_cell_ids(dir.path()).unwrap(), vec!["T1".to_string()]);
    }

    #[test]
    fn write_rejects_invalid_cell() {
        let dir = tempfile::tempdir().unwrap();
        let mut cell = tiny_cell();
        cell.cycle_data.clear();
        assert!(matches!(write_cell(&cell, &dir.path().join("x.json")), Err(Error::InvalidCell { .. })));
    }
}
